#include "nasb/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "nasb/error.hpp"
#include "nasb/nasgate.hpp"

namespace nasb::train {

using autograd::Var;
using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (epochs < 0) throw ValueError("train config: epochs must be nonnegative");
  if (batch_size < 1) throw ValueError("train config: batch size must be positive");
  if (finetune.weight_decay != 0.0)
    throw ValueError("train config: finetune weight decay must be 0");
}

std::string StageLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,split,loss,top1\n";
  os.precision(17);
  for (const auto& r : records)
    os << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.top1 << '\n';
  return os.str();
}

std::string StageLog::summary_json() const {
  ordered_json j;
  j["stage"] = stage;
  j["epochs"] = records.empty() ? 0 : records.back().epoch + 1;
  double final_train_loss = 0, final_train_top1 = 0;
  for (const auto& r : records)
    if (r.split == "train") {
      final_train_loss = r.loss;
      final_train_top1 = r.top1;
    }
  j["final_train_loss"] = final_train_loss;
  j["final_train_top1"] = final_train_top1;
  if (!alpha_history.empty()) {
    j["alpha_final"] = alpha_history.back();
    j["alpha_history"] = alpha_history;
  }
  j["wall_seconds"] = wall_seconds;
  return j.dump(2) + "\n";
}

namespace {

struct Batch {
  Tensor images;
  std::vector<std::int64_t> labels;
};

Batch gather(const data::Dataset& ds, std::span<const std::int64_t> idx) {
  const std::int64_t c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
  const std::int64_t per = c * h * w;
  Batch b;
  b.images = Tensor(Shape{static_cast<std::int64_t>(idx.size()), c, h, w});
  b.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = ds.images.data() + idx[i] * per;
    std::copy(src, src + per, b.images.data() + static_cast<std::int64_t>(i) * per);
    b.labels.push_back(ds.labels[static_cast<std::size_t>(idx[i])]);
  }
  return b;
}

// Random crop out of a zero-padded frame plus optional horizontal flip.
void augment(Batch& b, const TrainConfig& cfg, Rng& rng) {
  if (!cfg.augment_crop && !cfg.augment_flip) return;
  const std::int64_t n = b.images.dim(0), c = b.images.dim(1), h = b.images.dim(2),
                     w = b.images.dim(3);
  const std::int64_t p = cfg.augment_crop ? cfg.crop_padding : 0;
  Tensor out(b.images.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t dy = p > 0 ? rng.uniform_int(2 * p + 1) - p : 0;
    const std::int64_t dx = p > 0 ? rng.uniform_int(2 * p + 1) - p : 0;
    const bool flip = cfg.augment_flip && rng.uniform() < 0.5;
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const std::int64_t sx = flip ? w - 1 - x : x;
          const std::int64_t iy = y + dy, ix = sx + dx;
          out.at(i, ch, y, x) = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? b.images.at(i, ch, iy, ix)
                                    : 0.0;
        }
  }
  b.images = std::move(out);
}

std::vector<std::int64_t> shuffled_indices(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i)
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  return idx;
}

double batch_top1(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    if (best == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

struct Meter {
  double loss_sum = 0, top1_sum = 0;
  std::int64_t batches = 0;
  void add(double loss, double top1) {
    loss_sum += loss;
    top1_sum += top1;
    ++batches;
  }
  double loss() const { return batches ? loss_sum / static_cast<double>(batches) : 0; }
  double top1() const { return batches ? top1_sum / static_cast<double>(batches) : 0; }
};

}  // namespace

StageLog search_stage(cell::SuperNet& net, const data::Dataset& d,
                      const TrainConfig& cfg,
                      std::vector<std::uint64_t>* gate_rng_state) {
  cfg.validate();
  d.validate();
  const auto t0 = std::chrono::steady_clock::now();

  // Half of the data becomes the validation split for the architecture steps.
  Rng split_rng = Rng::substream(cfg.seed, "split");
  std::vector<std::int64_t> all = shuffled_indices(d.size(), split_rng);
  const std::int64_t half = d.size() / 2;
  if (half < cfg.batch_size)
    throw ValueError(msg("search: split of ", half, " samples cannot fill a batch of ",
                         cfg.batch_size));
  std::vector<std::int64_t> train_idx(all.begin(), all.begin() + half);
  std::vector<std::int64_t> val_idx(all.begin() + half, all.end());

  auto edges = net.edge_list();
  std::vector<Rng> gate_rngs;
  for (std::size_t e = 0; e < edges.size(); ++e)
    gate_rngs.push_back(Rng::substream(cfg.seed, "gates", e));

  auto weight_params = net.weight_params();
  auto alpha_params = net.alpha_params();
  optim::SgdMomentum sgd(cfg.weights.lr, cfg.weights.momentum, cfg.weights.weight_decay);
  optim::Adam adam(cfg.arch.lr, cfg.arch.beta1, cfg.arch.beta2, cfg.arch.eps,
                   cfg.arch.weight_decay);

  auto sample_all_gates = [&]() {
    std::vector<nasgate::GateSample> gates;
    gates.reserve(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const std::vector<double> p = nasgate::path_weights(edges[e]->alpha.value().vec());
      gates.push_back(nasgate::sample_gates(p, gate_rngs[e]));
    }
    return gates;
  };

  StageLog log;
  log.stage = "search";
  const std::int64_t steps = half / cfg.batch_size;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng train_order = Rng::substream(cfg.seed, "order.train", static_cast<std::uint64_t>(epoch));
    Rng val_order = Rng::substream(cfg.seed, "order.val", static_cast<std::uint64_t>(epoch));
    std::vector<std::int64_t> tr = shuffled_indices(half, train_order);
    std::vector<std::int64_t> va = shuffled_indices(half, val_order);

    Meter train_meter, val_meter;
    for (std::int64_t step = 0; step < steps; ++step) {
      // (a) validation batch: update architecture parameters only.
      {
        std::vector<std::int64_t> idx;
        for (std::int64_t i = 0; i < cfg.batch_size; ++i)
          idx.push_back(val_idx[static_cast<std::size_t>(va[static_cast<std::size_t>(
              (step * cfg.batch_size + i) % half)])]);
        Batch batch = gather(d, idx);
        auto gates = sample_all_gates();
        Var logits = net.forward(batch.images, gates, /*training=*/true);
        Var loss = autograd::softmax_cross_entropy(logits, batch.labels);
        autograd::backward(loss);
        val_meter.add(loss.value()[0], batch_top1(logits.value(), batch.labels));

        if (!cfg.freeze_arch && epoch >= cfg.arch_warmup_epochs) {
          for (std::size_t e = 0; e < edges.size(); ++e) {
            std::vector<double> grad_g(gates[e].g.size(), 0.0);
            grad_g[static_cast<std::size_t>(gates[e].active)] = *edges[e]->gate_grad;
            const std::vector<double> ga = nasgate::gate_grad_to_alpha(grad_g, gates[e].p);
            alpha_params[e].zero_grad();
            alpha_params[e].node()->accumulate(
                Tensor(Shape{static_cast<std::int64_t>(ga.size())},
                       std::vector<double>(ga.begin(), ga.end())));
          }
          adam.step(alpha_params);
        }
        sgd.zero_grad(weight_params);
        adam.zero_grad(alpha_params);
      }
      // (b) training batch: update model weights only.
      {
        std::vector<std::int64_t> idx;
        for (std::int64_t i = 0; i < cfg.batch_size; ++i)
          idx.push_back(train_idx[static_cast<std::size_t>(tr[static_cast<std::size_t>(
              (step * cfg.batch_size + i) % half)])]);
        Batch batch = gather(d, idx);
        auto gates = sample_all_gates();
        Var logits = net.forward(batch.images, gates, /*training=*/true);
        Var loss = autograd::softmax_cross_entropy(logits, batch.labels);
        autograd::backward(loss);
        train_meter.add(loss.value()[0], batch_top1(logits.value(), batch.labels));
        if (!cfg.freeze_weights) sgd.step(weight_params);
        sgd.zero_grad(weight_params);
        adam.zero_grad(alpha_params);
      }
    }
    log.records.push_back({epoch, "train", train_meter.loss(), train_meter.top1()});
    log.records.push_back({epoch, "val", val_meter.loss(), val_meter.top1()});
    std::vector<std::vector<double>> snapshot;
    for (auto* e : edges) snapshot.push_back(e->alpha.value().vec());
    log.alpha_history.push_back(std::move(snapshot));
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        (epoch + 1) % cfg.checkpoint_every == 0)
      supernet_checkpoint(net).save(cfg.checkpoint_path);
  }

  if (gate_rng_state) {
    gate_rng_state->clear();
    for (const auto& r : gate_rngs)
      for (auto word : r.state()) gate_rng_state->push_back(word);
  }

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

namespace {

StageLog run_epochs(cell::Network& net, const data::Dataset& ds, const TrainConfig& cfg,
                    const std::string& stage, bool use_adam,
                    const std::string& rng_tag) {
  cfg.validate();
  ds.validate();
  const auto t0 = std::chrono::steady_clock::now();

  auto params = net.params();
  std::unique_ptr<optim::SgdMomentum> sgd;
  std::unique_ptr<optim::Adam> adam;
  if (use_adam)
    adam = std::make_unique<optim::Adam>(cfg.finetune.lr, cfg.finetune.beta1,
                                         cfg.finetune.beta2, cfg.finetune.eps,
                                         cfg.finetune.weight_decay);
  else
    sgd = std::make_unique<optim::SgdMomentum>(cfg.weights.lr, cfg.weights.momentum,
                                               cfg.weights.weight_decay);

  StageLog log;
  log.stage = stage;
  const std::int64_t steps = std::max<std::int64_t>(1, ds.size() / cfg.batch_size);

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order = Rng::substream(cfg.seed, rng_tag + ".order", static_cast<std::uint64_t>(epoch));
    Rng aug = Rng::substream(cfg.seed, rng_tag + ".augment", static_cast<std::uint64_t>(epoch));
    std::vector<std::int64_t> idx = shuffled_indices(ds.size(), order);

    Meter meter;
    for (std::int64_t step = 0; step < steps; ++step) {
      std::vector<std::int64_t> sel;
      for (std::int64_t i = 0; i < cfg.batch_size; ++i)
        sel.push_back(idx[static_cast<std::size_t>((step * cfg.batch_size + i) %
                                                   ds.size())]);
      Batch batch = gather(ds, sel);
      augment(batch, cfg, aug);
      Var logits = net.forward(batch.images, /*training=*/true);
      Var loss = autograd::softmax_cross_entropy(logits, batch.labels);
      autograd::backward(loss);
      meter.add(loss.value()[0], batch_top1(logits.value(), batch.labels));
      if (use_adam)
        adam->step(params);
      else
        sgd->step(params);
      for (auto& p : params) p.zero_grad();
    }
    log.records.push_back({epoch, "train", meter.loss(), meter.top1()});
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        (epoch + 1) % cfg.checkpoint_every == 0)
      network_checkpoint(net).save(cfg.checkpoint_path);
  }

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace

StageLog pretrain_stage(cell::Network& mp, const data::Dataset& dprime,
                        const TrainConfig& cfg) {
  if (mp.mode() != cell::NetMode::Full)
    throw ValueError("pretrain: model must be instantiated in full mode");
  return run_epochs(mp, dprime, cfg, "pretrain", /*use_adam=*/false, "pretrain");
}

StageLog finetune_stage(cell::Network& mf, const data::Dataset& dprime,
                        const TrainConfig& cfg) {
  if (mf.mode() != cell::NetMode::Binary)
    throw ValueError("finetune: model must be instantiated in binary mode");
  return run_epochs(mf, dprime, cfg, "finetune", /*use_adam=*/true, "finetune");
}

EvalResult evaluate_logits(const Tensor& logits, const std::vector<std::int64_t>& labels,
                           std::int64_t topk) {
  if (logits.rank() != 2)
    throw ShapeError("evaluate_logits: logits must be rank 2");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeError(msg("evaluate_logits: ", labels.size(), " labels for batch of ", n));
  EvalResult res;
  res.k = std::min<std::int64_t>(topk, k);
  res.count = n;
  std::int64_t top1_hits = 0, topk_hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k)
      throw ValueError(msg("evaluate_logits: label ", label, " out of class range [0,",
                           k, ")"));
    std::int64_t best = 0;
    std::int64_t above = 0;        // classes strictly better than the label
    std::int64_t ties_before = 0;  // equal-logit classes with lower index
    for (std::int64_t j = 0; j < k; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
      if (logits.at(i, j) > logits.at(i, label)) ++above;
      if (j < label && logits.at(i, j) == logits.at(i, label)) ++ties_before;
    }
    if (best == label) ++top1_hits;
    if (above + ties_before < res.k) ++topk_hits;
  }
  res.top1 = static_cast<double>(top1_hits) / static_cast<double>(n);
  res.topk = static_cast<double>(topk_hits) / static_cast<double>(n);
  return res;
}

EvalResult evaluate(cell::Network& net, const data::Dataset& ds, std::int64_t topk) {
  ds.validate();
  const std::int64_t batch = 64;
  Tensor all_logits;
  std::int64_t filled = 0;
  for (std::int64_t start = 0; start < ds.size(); start += batch) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = start; i < std::min(start + batch, ds.size()); ++i)
      idx.push_back(i);
    Batch b = gather(ds, idx);
    Var logits = net.forward(b.images, /*training=*/false);
    if (!all_logits.defined())
      all_logits = Tensor(Shape{ds.size(), logits.value().dim(1)});
    std::copy(logits.value().data(), logits.value().data() + logits.value().size(),
              all_logits.data() + filled);
    filled += logits.value().size();
  }
  return evaluate_logits(all_logits, ds.labels, topk);
}

// ---- checkpoint plumbing ------------------------------------------------------

ckpt::Checkpoint supernet_checkpoint(cell::SuperNet& net,
                                     const std::vector<std::uint64_t>& rng_state) {
  ckpt::Checkpoint c;
  c.meta_json = net.plan().to_json();
  c.tensors = net.state_tensors();
  c.rng_state = rng_state;
  return c;
}

cell::SuperNet load_supernet(const ckpt::Checkpoint& c, std::uint64_t seed) {
  cell::SuperNetPlan plan = cell::SuperNetPlan::from_json(c.meta_json);
  cell::SuperNet net(plan, seed);
  net.load_state(c.tensors);
  return net;
}

std::string network_meta_json(const cell::Network& net) {
  ordered_json j;
  j["type"] = "network";
  switch (net.mode()) {
    case cell::NetMode::Search: j["mode"] = "search"; break;
    case cell::NetMode::Full: j["mode"] = "full"; break;
    case cell::NetMode::Binary: j["mode"] = "binary"; break;
  }
  j["in_channels"] = net.config().in_channels;
  j["num_classes"] = net.config().num_classes;
  j["stem_kernel"] = net.config().stem_kernel;
  j["policy"] = net.policy().name();
  j["genotype"] = ordered_json::parse(net.genotype().to_json());
  return j.dump(2) + "\n";
}

NetworkMeta parse_network_meta(const std::string& meta_json) {
  ordered_json j;
  try {
    j = ordered_json::parse(meta_json);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(msg("checkpoint meta: invalid JSON: ", e.what()));
  }
  NetworkMeta m;
  try {
    if (j.at("type").get<std::string>() != "network")
      throw IoError("checkpoint meta: expected a network checkpoint");
    m.mode = cell::net_mode_from_name(j.at("mode").get<std::string>());
    m.config.in_channels = j.at("in_channels").get<std::int64_t>();
    m.config.num_classes = j.at("num_classes").get<std::int64_t>();
    m.config.stem_kernel = j.at("stem_kernel").get<std::int64_t>();
    m.policy = PrecisionPolicy::parse(j.at("policy").get<std::string>());
    m.genotype = cell::Genotype::from_json(j.at("genotype").dump());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(msg("checkpoint meta: missing or malformed field: ", e.what()));
  }
  return m;
}

ckpt::Checkpoint network_checkpoint(cell::Network& net) {
  ckpt::Checkpoint c;
  c.meta_json = network_meta_json(net);
  c.tensors = net.state_tensors();
  return c;
}

cell::Network load_network(const ckpt::Checkpoint& c, std::uint64_t seed) {
  NetworkMeta m = parse_network_meta(c.meta_json);
  cell::Network net(m.genotype, m.mode, m.policy, m.config, seed);
  net.load_state(c.tensors);
  return net;
}

}  // namespace nasb::train
