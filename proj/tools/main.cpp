// Command line driver: dataset generation, the three training stages,
// genotype derivation, evaluation and the cost model.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nasb/costmodel.hpp"
#include "nasb/dataset.hpp"
#include "nasb/error.hpp"
#include "nasb/io_util.hpp"
#include "nasb/trainer.hpp"

namespace {

using nlohmann::json;

// Fills fields from the config file section unless the flag was passed
// explicitly; flags always win.
struct ConfigBinder {
  json section;
  CLI::App* cmd = nullptr;

  template <typename T>
  void apply(const std::string& key, T& field) const {
    if (section.is_null() || !section.contains(key)) return;
    const CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt && opt->count() > 0) return;
    field = section.at(key).get<T>();
  }
};

json load_config_section(const std::string& path, const std::string& subcommand) {
  if (path.empty()) return json();
  json root;
  try {
    root = json::parse(nasb::io::read_file(path));
  } catch (const json::exception& e) {
    throw nasb::IoError(nasb::msg("config '", path, "': invalid JSON: ", e.what()));
  }
  if (root.contains(subcommand)) return root.at(subcommand);
  return json();
}

std::vector<nasb::cell::OpKind> parse_op_set(const std::string& csv) {
  if (csv.empty() || csv == "all") {
    const auto all = nasb::cell::all_op_kinds();
    return {all.begin(), all.end()};
  }
  std::vector<nasb::cell::OpKind> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    const std::string name =
        csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!name.empty()) out.push_back(nasb::cell::op_from_name(name));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw nasb::ValueError("op-set: no operations given");
  return out;
}

void write_logs(const nasb::train::StageLog& log, const std::string& prefix) {
  nasb::io::atomic_write(prefix + ".log.csv", log.to_csv());
  nasb::io::atomic_write(prefix + ".summary.json", log.summary_json());
}

nasb::train::TrainConfig train_config_from(std::int64_t epochs, std::int64_t batch,
                                           std::uint64_t seed, double lr_weights,
                                           double momentum, double lr_arch,
                                           double lr_finetune, bool augment) {
  nasb::train::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.seed = seed;
  cfg.weights.lr = lr_weights;
  cfg.weights.momentum = momentum;
  cfg.arch.lr = lr_arch;
  cfg.finetune.lr = lr_finetune;
  cfg.augment_crop = augment;
  cfg.augment_flip = augment;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary CNN architecture search toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its values");

  int exit_code = 0;

  // ---- gen-data -------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
  struct {
    std::string out_images, out_labels;
    std::int64_t classes = 2, samples = 2000, size = 16, channels = 1;
    std::string difficulty = "easy";
    std::uint64_t seed = 1;
  } g;
  gen->add_option("--out-images", g.out_images)->required();
  gen->add_option("--out-labels", g.out_labels)->required();
  gen->add_option("--classes", g.classes);
  gen->add_option("--samples", g.samples);
  gen->add_option("--size", g.size);
  gen->add_option("--channels", g.channels);
  gen->add_option("--difficulty", g.difficulty);
  gen->add_option("--seed", g.seed);
  gen->callback([&] {
    ConfigBinder bind{load_config_section(config_path, "gen-data"), gen};
    bind.apply("classes", g.classes);
    bind.apply("samples", g.samples);
    bind.apply("size", g.size);
    bind.apply("channels", g.channels);
    bind.apply("difficulty", g.difficulty);
    bind.apply("seed", g.seed);
    nasb::data::SynthSpec spec;
    spec.classes = g.classes;
    spec.samples = g.samples;
    spec.image_size = g.size;
    spec.channels = g.channels;
    spec.difficulty = nasb::data::difficulty_from_name(g.difficulty);
    spec.seed = g.seed;
    nasb::data::Dataset ds = nasb::data::gen_synthetic(spec);
    nasb::data::save_dataset(ds, g.out_images, g.out_labels);
    std::printf("wrote %lld images to %s, labels to %s\n",
                static_cast<long long>(ds.size()), g.out_images.c_str(),
                g.out_labels.c_str());
  });

  // ---- search ---------------------------------------------------------------
  auto* search = app.add_subcommand("search", "stage 1: train the supercell and its architecture parameters");
  struct {
    std::string images, labels, out;
    std::int64_t epochs = 30, batch = 16, cells = 3, nodes = 2, channels = 8,
                 stem_kernel = 3;
    std::uint64_t seed = 1;
    double lr_weights = 0.05, momentum = 0.9, lr_arch = 0.05;
    std::int64_t arch_warmup = 0, checkpoint_every = 0;
    std::string op_set = "all";
    bool freeze_arch = false, freeze_weights = false;
  } s;
  search->add_option("--images", s.images)->required();
  search->add_option("--labels", s.labels)->required();
  search->add_option("--out", s.out)->required();
  search->add_option("--epochs", s.epochs);
  search->add_option("--batch", s.batch);
  search->add_option("--cells", s.cells);
  search->add_option("--nodes", s.nodes);
  search->add_option("--channels", s.channels);
  search->add_option("--stem-kernel", s.stem_kernel);
  search->add_option("--seed", s.seed);
  search->add_option("--lr-weights", s.lr_weights);
  search->add_option("--momentum", s.momentum);
  search->add_option("--lr-arch", s.lr_arch);
  search->add_option("--op-set", s.op_set, "comma separated operation names or 'all'");
  search->add_option("--arch-warmup", s.arch_warmup,
                     "weight-only epochs before architecture updates begin");
  search->add_option("--checkpoint-every", s.checkpoint_every,
                     "rewrite the output checkpoint every N epochs");
  search->add_flag("--freeze-arch", s.freeze_arch);
  search->add_flag("--freeze-weights", s.freeze_weights);
  search->callback([&] {
    ConfigBinder bind{load_config_section(config_path, "search"), search};
    bind.apply("epochs", s.epochs);
    bind.apply("batch", s.batch);
    bind.apply("cells", s.cells);
    bind.apply("nodes", s.nodes);
    bind.apply("channels", s.channels);
    bind.apply("stem-kernel", s.stem_kernel);
    bind.apply("seed", s.seed);
    bind.apply("lr-weights", s.lr_weights);
    bind.apply("momentum", s.momentum);
    bind.apply("lr-arch", s.lr_arch);
    bind.apply("arch-warmup", s.arch_warmup);
    bind.apply("checkpoint-every", s.checkpoint_every);
    bind.apply("op-set", s.op_set);

    nasb::data::Dataset d = nasb::data::load_dataset(s.images, s.labels);
    nasb::cell::SuperNetPlan plan;
    plan.net.in_channels = d.images.dim(1);
    plan.net.num_classes = d.num_classes;
    plan.net.stem_kernel = s.stem_kernel;
    for (std::int64_t c = 0; c < s.cells; ++c) {
      nasb::cell::GroupPlan gp;
      gp.channels.assign(static_cast<std::size_t>(s.nodes), s.channels);
      gp.strides.assign(static_cast<std::size_t>(s.nodes - 1), 1);
      plan.groups.push_back(std::move(gp));
    }
    plan.op_set = parse_op_set(s.op_set);
    nasb::cell::SuperNet net(plan, s.seed);

    nasb::train::TrainConfig cfg =
        train_config_from(s.epochs, s.batch, s.seed, s.lr_weights, s.momentum,
                          s.lr_arch, 1e-3, /*augment=*/false);
    cfg.arch_warmup_epochs = s.arch_warmup;
    cfg.checkpoint_every = s.checkpoint_every;
    cfg.checkpoint_path = s.out;
    cfg.freeze_arch = s.freeze_arch;
    cfg.freeze_weights = s.freeze_weights;
    std::vector<std::uint64_t> gate_state;
    nasb::train::StageLog log = nasb::train::search_stage(net, d, cfg, &gate_state);
    nasb::train::supernet_checkpoint(net, gate_state).save(s.out);
    write_logs(log, s.out);
    std::printf("search done: %s (val loss %.4f)\n", s.out.c_str(),
                log.records.empty() ? 0.0 : log.records.back().loss);
  });

  // ---- derive ---------------------------------------------------------------
  auto* derive = app.add_subcommand("derive", "turn trained architecture parameters into a genotype");
  struct {
    std::string in, out, variant = "nasb";
  } dv;
  derive->add_option("--in", dv.in)->required();
  derive->add_option("--out", dv.out)->required();
  derive->add_option("--variant", dv.variant);
  derive->callback([&] {
    ConfigBinder bind{load_config_section(config_path, "derive"), derive};
    bind.apply("variant", dv.variant);
    nasb::ckpt::Checkpoint c = nasb::ckpt::Checkpoint::load(dv.in);
    nasb::cell::SuperNet net = nasb::train::load_supernet(c, /*seed=*/0);
    const auto spec =
        nasb::cell::RetainSpec::for_variant(nasb::cell::variant_from_name(dv.variant));
    nasb::cell::Genotype geno = nasb::cell::derive(net, spec);
    geno.save(dv.out);
    std::printf("derived %s genotype with %zu cell(s) -> %s\n", dv.variant.c_str(),
                geno.cells.size(), dv.out.c_str());
  });

  // ---- pretrain ---------------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "stage 2: train the full-precision derived model");
  struct {
    std::string genotype, images, labels, out;
    std::int64_t epochs = 30, batch = 16, stem_kernel = 3;
    std::uint64_t seed = 1;
    double lr = 0.05, momentum = 0.9;
    bool no_augment = false;
    std::string policy = "binary";
  } p;
  pre->add_option("--genotype", p.genotype)->required();
  pre->add_option("--images", p.images)->required();
  pre->add_option("--labels", p.labels)->required();
  pre->add_option("--out", p.out)->required();
  pre->add_option("--epochs", p.epochs);
  pre->add_option("--batch", p.batch);
  pre->add_option("--stem-kernel", p.stem_kernel);
  pre->add_option("--seed", p.seed);
  pre->add_option("--lr", p.lr);
  pre->add_option("--momentum", p.momentum);
  pre->add_option("--policy", p.policy);
  pre->add_flag("--no-augment", p.no_augment);
  pre->callback([&] {
    ConfigBinder bind{load_config_section(config_path, "pretrain"), pre};
    bind.apply("epochs", p.epochs);
    bind.apply("batch", p.batch);
    bind.apply("stem-kernel", p.stem_kernel);
    bind.apply("seed", p.seed);
    bind.apply("lr", p.lr);
    bind.apply("momentum", p.momentum);
    bind.apply("policy", p.policy);

    nasb::data::Dataset d = nasb::data::load_dataset(p.images, p.labels);
    nasb::cell::Genotype geno = nasb::cell::Genotype::load(p.genotype);
    nasb::cell::NetConfig nc;
    nc.in_channels = d.images.dim(1);
    nc.num_classes = d.num_classes;
    nc.stem_kernel = p.stem_kernel;
    nasb::cell::Network mp(geno, nasb::cell::NetMode::Full,
                           nasb::PrecisionPolicy::parse(p.policy), nc, p.seed);
    nasb::train::TrainConfig cfg = train_config_from(
        p.epochs, p.batch, p.seed, p.lr, p.momentum, 1e-3, 1e-3, !p.no_augment);
    nasb::train::StageLog log = nasb::train::pretrain_stage(mp, d, cfg);
    nasb::train::network_checkpoint(mp).save(p.out);
    write_logs(log, p.out);
    const auto res = nasb::train::evaluate(mp, d, 5);
    std::printf("pretrain done: %s (train top1 %.4f)\n", p.out.c_str(), res.top1);
  });

  // ---- finetune ---------------------------------------------------------------
  auto* fin = app.add_subcommand("finetune", "stage 3: binarize the pretrained model and train it");
  struct {
    std::string in, images, labels, out, genotype;
    std::int64_t epochs = 30, batch = 16;
    std::uint64_t seed = 1;
    double lr = 0.002;
    bool no_augment = false;
  } f;
  fin->add_option("--in", f.in)->required();
  fin->add_option("--images", f.images)->required();
  fin->add_option("--labels", f.labels)->required();
  fin->add_option("--out", f.out)->required();
  fin->add_option("--genotype", f.genotype, "optional genotype file to validate against");
  fin->add_option("--epochs", f.epochs);
  fin->add_option("--batch", f.batch);
  fin->add_option("--seed", f.seed);
  fin->add_option("--lr", f.lr);
  fin->add_flag("--no-augment", f.no_augment);
  fin->callback([&] {
    ConfigBinder bind{load_config_section(config_path, "finetune"), fin};
    bind.apply("epochs", f.epochs);
    bind.apply("batch", f.batch);
    bind.apply("seed", f.seed);
    bind.apply("lr", f.lr);

    nasb::ckpt::Checkpoint c = nasb::ckpt::Checkpoint::load(f.in);
    nasb::train::NetworkMeta meta = nasb::train::parse_network_meta(c.meta_json);
    if (meta.mode != nasb::cell::NetMode::Full)
      throw nasb::ValueError("finetune: --in must be a pretrained full-precision checkpoint");
    if (!f.genotype.empty()) {
      nasb::cell::Genotype expect = nasb::cell::Genotype::load(f.genotype);
      if (expect.to_json() != meta.genotype.to_json())
        throw nasb::ValueError(
            "finetune: checkpoint genotype does not match --genotype file");
    }
    nasb::data::Dataset d = nasb::data::load_dataset(f.images, f.labels);
    nasb::cell::Network mf(meta.genotype, nasb::cell::NetMode::Binary, meta.policy,
                           meta.config, f.seed);
    mf.load_state(c.tensors);
    nasb::train::TrainConfig cfg = train_config_from(
        f.epochs, f.batch, f.seed, 0.05, 0.9, 1e-3, f.lr, !f.no_augment);
    nasb::train::StageLog log = nasb::train::finetune_stage(mf, d, cfg);
    nasb::train::network_checkpoint(mf).save(f.out);
    write_logs(log, f.out);
    const auto res = nasb::train::evaluate(mf, d, 5);
    std::printf("finetune done: %s (train top1 %.4f)\n", f.out.c_str(), res.top1);
  });

  // ---- eval ---------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  struct {
    std::string in, images, labels, json_out;
    std::int64_t topk = 5;
  } e;
  ev->add_option("--in", e.in)->required();
  ev->add_option("--images", e.images)->required();
  ev->add_option("--labels", e.labels)->required();
  ev->add_option("--topk", e.topk);
  ev->add_option("--json", e.json_out, "write the result as JSON");
  ev->callback([&] {
    nasb::ckpt::Checkpoint c = nasb::ckpt::Checkpoint::load(e.in);
    nasb::cell::Network net = nasb::train::load_network(c);
    nasb::data::Dataset d = nasb::data::load_dataset(e.images, e.labels);
    const auto res = nasb::train::evaluate(net, d, e.topk);
    std::printf("top1 %.6f\ntop%lld %.6f\n", res.top1, static_cast<long long>(res.k),
                res.topk);
    if (!e.json_out.empty()) {
      json j;
      j["top1"] = res.top1;
      j["topk"] = res.topk;
      j["k"] = res.k;
      j["count"] = res.count;
      nasb::io::atomic_write(e.json_out, j.dump(2) + "\n");
    }
  });

  // ---- cost ---------------------------------------------------------------
  auto* cost = app.add_subcommand("cost", "analytic memory and flops accounting");
  struct {
    std::string arch, genotype, policy, json_out;
    std::int64_t input_size = 224, input_channels = 1, classes = 2, stem_kernel = 3;
    double d = 32.0, divisor = 64.0;
  } co;
  cost->add_option("--arch", co.arch, "built-in reference architecture name");
  cost->add_option("--genotype", co.genotype, "genotype JSON file");
  cost->add_option("--policy", co.policy, "full | binary | binary+1x1");
  cost->add_option("--input-size", co.input_size);
  cost->add_option("--input-channels", co.input_channels);
  cost->add_option("--classes", co.classes);
  cost->add_option("--stem-kernel", co.stem_kernel);
  cost->add_option("--d", co.d, "pooling bit width");
  cost->add_option("--divisor", co.divisor, "bitwise parallelism divisor");
  cost->add_option("--json", co.json_out, "write the full report as JSON");
  cost->callback([&] {
    ConfigBinder bind{load_config_section(config_path, "cost"), cost};
    bind.apply("policy", co.policy);
    bind.apply("input-size", co.input_size);
    bind.apply("d", co.d);
    bind.apply("divisor", co.divisor);
    if (co.arch.empty() == co.genotype.empty())
      throw nasb::ValueError("cost: give exactly one of --arch or --genotype");

    nasb::costmodel::CostOptions opt;
    opt.d = co.d;
    opt.divisor = co.divisor;

    nasb::costmodel::CostReport rep;
    if (!co.arch.empty()) {
      const auto layers = nasb::costmodel::reference_model(co.arch, co.input_size);
      nasb::PrecisionPolicy policy =
          co.policy.empty() ? nasb::costmodel::reference_default_policy(co.arch)
                            : nasb::PrecisionPolicy::parse(co.policy);
      if (co.arch.rfind("bireal-", 0) == 0 || co.arch.rfind("nasb-", 0) == 0) {
        const auto ref = nasb::costmodel::reference_model(
            "resnet" + co.arch.substr(co.arch.find("resnet") + 6), co.input_size);
        rep = nasb::costmodel::model_cost(layers, policy, opt, &ref);
      } else {
        rep = nasb::costmodel::model_cost(layers, policy, opt);
      }
    } else {
      nasb::cell::Genotype geno = nasb::cell::Genotype::load(co.genotype);
      nasb::costmodel::GenotypeCostConfig gcfg;
      gcfg.in_channels = co.input_channels;
      gcfg.input_hw = co.input_size;
      gcfg.num_classes = co.classes;
      gcfg.stem_kernel = co.stem_kernel;
      const auto layers = nasb::costmodel::genotype_layers(geno, gcfg);
      nasb::PrecisionPolicy policy = co.policy.empty()
                                         ? nasb::PrecisionPolicy::binary()
                                         : nasb::PrecisionPolicy::parse(co.policy);
      rep = nasb::costmodel::model_cost(layers, policy, opt);
    }
    std::fputs(rep.to_table().c_str(), stdout);
    if (!co.json_out.empty()) nasb::io::atomic_write(co.json_out, rep.to_json());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& pe) {
    std::cerr << pe.what() << "\n\n" << app.help();
    return 2;
  } catch (const nasb::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return exit_code;
}
