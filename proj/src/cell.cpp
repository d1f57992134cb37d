#include "nasb/cell.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "nasb/error.hpp"

namespace nasb::cell {

using autograd::Var;
using ordered_json = nlohmann::ordered_json;

NetMode net_mode_from_name(std::string_view name) {
  if (name == "search") return NetMode::Search;
  if (name == "full") return NetMode::Full;
  if (name == "binary") return NetMode::Binary;
  throw ValueError(msg("unknown net mode '", name, "'"));
}

void GroupPlan::validate() const {
  if (channels.size() < 2)
    throw ValueError("group plan: need at least two nodes (input + one)");
  if (strides.size() != channels.size() - 1)
    throw ValueError(msg("group plan: ", strides.size(), " strides for ",
                         channels.size() - 1, " backbone layers"));
  for (auto c : channels)
    if (c <= 0) throw ValueError(msg("group plan: channel count must be positive, got ", c));
  for (std::size_t i = 0; i < strides.size(); ++i) {
    if (strides[i] != 1 && strides[i] != 2)
      throw ValueError(msg("group plan: stride must be 1 or 2, got ", strides[i]));
    // Channels may only change together with the backbone conv that owns the
    // transition; any plan is representable, so just check positivity above.
  }
}

Var ParamRegistry::add(const std::string& name, Tensor init) {
  for (const auto& [n, v] : params)
    if (n == name) throw ValueError(msg("duplicate parameter name '", name, "'"));
  Var v = Var::param(std::move(init));
  params.emplace_back(name, v);
  return v;
}

std::vector<Var> ParamRegistry::values() const {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& [n, v] : params) out.push_back(v);
  return out;
}

namespace {

Tensor conv_weight_init(const autograd::ConvSpec& spec, std::uint64_t seed,
                        const std::string& name) {
  Rng rng = Rng::substream(seed, name);
  const double fan_in =
      static_cast<double>(spec.c_in * spec.kernel_h * spec.kernel_w);
  return Tensor::randn(Shape{spec.c_out, spec.c_in, spec.kernel_h, spec.kernel_w},
                       rng, std::sqrt(2.0 / fan_in));
}

autograd::Var apply_stride_subsample(Var h, std::int64_t stride) {
  while (stride > 1) {
    if (stride % 2 != 0)
      throw ValueError(msg("cell op: unsupported cumulative stride ", stride));
    h = autograd::subsample2(h);
    stride /= 2;
  }
  return h;
}

}  // namespace

namespace unit {

Var ConvUnit::forward(const Var& x, bool training) const {
  Var h = x;
  if (entry_tanh) h = autograd::tanh_op(h);
  if (entry_sign) h = binarize::sign_ste(h);
  Var w = binarize_weights ? binarize::weight_ste(weight, scale_granularity) : weight;
  h = autograd::conv2d(h, w, spec);
  if (relu) h = autograd::relu(h);
  return autograd::batch_norm(h, gamma, beta, *bn, training);
}

ConvUnit make_conv_unit(ParamRegistry& reg, const std::string& name,
                        const autograd::ConvSpec& spec, NetMode mode,
                        bool will_binarize, std::uint64_t seed) {
  ConvUnit u;
  u.spec = spec;
  u.weight = reg.add(name + ".w", conv_weight_init(spec, seed, name + ".w"));
  u.gamma = reg.add(name + ".bn.gamma", Tensor::full(Shape{spec.c_out}, 1.0));
  u.beta = reg.add(name + ".bn.beta", Tensor::zeros(Shape{spec.c_out}));
  u.bn = std::make_shared<autograd::BatchNormState>();
  reg.bn_states.emplace_back(name + ".bn", u.bn.get());
  u.binarize_weights = will_binarize && mode != NetMode::Full;
  u.entry_tanh = will_binarize && mode == NetMode::Full;
  u.entry_sign = will_binarize && mode != NetMode::Full;
  u.relu = mode != NetMode::Search;
  return u;
}

Var PoolUnit::forward(const Var& x, bool training) const {
  Var h = kind == OpKind::MaxPool3 ? autograd::max_pool3x3(x, stride, 1)
                                   : autograd::avg_pool3x3(x, stride, 1);
  if (x.value().dim(1) != c_dst) h = autograd::pad_channels(h, c_dst);
  return autograd::batch_norm(h, gamma, beta, *bn, training);
}

PoolUnit make_pool_unit(ParamRegistry& reg, const std::string& name, OpKind kind,
                        std::int64_t stride, std::int64_t c_dst) {
  PoolUnit u;
  u.kind = kind;
  u.stride = stride;
  u.c_dst = c_dst;
  u.gamma = reg.add(name + ".bn.gamma", Tensor::full(Shape{c_dst}, 1.0));
  u.beta = reg.add(name + ".bn.beta", Tensor::zeros(Shape{c_dst}));
  u.bn = std::make_shared<autograd::BatchNormState>();
  reg.bn_states.emplace_back(name + ".bn", u.bn.get());
  return u;
}

}  // namespace unit

Var CellOp::forward(const Var& x, bool training) const {
  const Tensor& xv = x.value();
  if (xv.dim(1) != c_src)
    throw ShapeError(msg("cell op: input channel dim ", xv.dim(1),
                         " does not match source plan ", c_src));
  switch (kind) {
    case OpKind::Zero: {
      std::int64_t oh = xv.dim(2), ow = xv.dim(3);
      for (std::int64_t s = stride; s > 1; s /= 2) {
        oh = (oh + 1) / 2;
        ow = (ow + 1) / 2;
      }
      return Var::constant(Tensor::zeros(Shape{xv.dim(0), c_dst, oh, ow}));
    }
    case OpKind::Identity: {
      Var h = apply_stride_subsample(x, stride);
      if (c_dst != c_src) h = autograd::pad_channels(h, c_dst);
      return h;
    }
    case OpKind::AvgPool3:
    case OpKind::MaxPool3:
      return pool->forward(x, training);
    default:
      return conv->forward(x, training);
  }
}

CellOp make_cell_op(ParamRegistry& reg, const std::string& name, OpKind kind,
                    std::int64_t c_src, std::int64_t c_dst, std::int64_t stride,
                    NetMode mode, const PrecisionPolicy& policy, std::uint64_t seed) {
  if (c_dst < c_src)
    throw ShapeError(msg("cell op '", name, "': cannot adapt channels ", c_src,
                         " down to ", c_dst));
  CellOp op;
  op.kind = kind;
  op.stride = stride;
  op.c_src = c_src;
  op.c_dst = c_dst;
  if (is_pool(kind)) {
    op.pool = unit::make_pool_unit(reg, name, kind, stride, c_dst);
  } else if (is_conv(kind)) {
    autograd::ConvSpec spec;
    spec.c_in = c_src;
    spec.c_out = c_dst;
    spec.kernel_h = spec.kernel_w = conv_kernel(kind);
    spec.dilation = conv_dilation(kind);
    spec.stride = stride;
    spec.padding = spec.dilation * (spec.kernel_h - 1) / 2;
    bool will_binarize = policy.binarize;
    if (policy.exempt_downsample && stride > 1) will_binarize = false;
    if (policy.exempt_1x1 && spec.kernel_h == 1) will_binarize = false;
    op.conv = unit::make_conv_unit(reg, name, spec, mode, will_binarize, seed);
  }
  return op;
}

// ---- SuperCell -------------------------------------------------------------

SuperCell::SuperCell(ParamRegistry& reg, const std::string& prefix,
                     const GroupPlan& plan, std::span<const OpKind> op_set,
                     std::uint64_t seed)
    : plan_(plan), op_set_(op_set.begin(), op_set.end()) {
  plan_.validate();
  if (op_set_.empty()) throw ValueError("supercell: empty operation set");
  const std::int64_t n = plan_.n_nodes();
  const PrecisionPolicy policy = PrecisionPolicy::binary();

  for (std::int64_t j = 1; j < n; ++j) {
    autograd::ConvSpec spec;
    spec.c_in = plan_.channels[static_cast<std::size_t>(j - 1)];
    spec.c_out = plan_.channels[static_cast<std::size_t>(j)];
    spec.kernel_h = spec.kernel_w = 3;
    spec.stride = plan_.strides[static_cast<std::size_t>(j - 1)];
    spec.padding = 1;
    backbone_.push_back(unit::make_conv_unit(
        reg, prefix + ".backbone." + std::to_string(j), spec, NetMode::Search,
        /*will_binarize=*/true, seed));
  }

  for (std::int64_t j = 1; j < n; ++j) {
    for (std::int64_t i = 0; i < j; ++i) {
      Edge e;
      e.src = i;
      e.dst = j;
      std::int64_t stride = 1;
      for (std::int64_t t = i; t < j; ++t)
        stride *= plan_.strides[static_cast<std::size_t>(t)];
      const std::string ename =
          prefix + ".edge." + std::to_string(i) + "." + std::to_string(j);
      for (std::size_t oi = 0; oi < op_set_.size(); ++oi) {
        e.ops.push_back(make_cell_op(
            reg, ename + ".op." + std::to_string(static_cast<int>(op_set_[oi])),
            op_set_[oi], plan_.channels[static_cast<std::size_t>(i)],
            plan_.channels[static_cast<std::size_t>(j)], stride, NetMode::Search,
            policy, seed));
      }
      // alpha starts at zero: uniform path weights
      e.alpha = Var::param(Tensor::zeros(Shape{static_cast<std::int64_t>(op_set_.size())}));
      e.gate_grad = std::make_shared<double>(0.0);
      edges_.push_back(std::move(e));
    }
  }
}

namespace {

// Identity-valued node that records <dL/dout, out> into a slot, which is
// exactly dL/dg of the sampled gate (the edge output is g * op_out, g = 1).
Var gate_tap(const Var& x, std::shared_ptr<double> slot) {
  Tensor v = x.value();
  return autograd::make_op(std::move(v), {x},
                           [slot](autograd::detail::Node& n) {
                             const Tensor& out = n.parents[0]->value;
                             double d = 0.0;
                             for (std::int64_t i = 0; i < out.size(); ++i)
                               d += n.grad[i] * out[i];
                             *slot += d;
                             n.parents[0]->accumulate(n.grad);
                           });
}

}  // namespace

Var SuperCell::forward(const Var& x, std::span<const nasgate::GateSample> gates,
                       bool training) const {
  if (gates.size() != edges_.size())
    throw ValueError(msg("supercell forward: ", gates.size(), " gates for ",
                         edges_.size(), " edges"));
  const std::int64_t n = plan_.n_nodes();
  std::vector<Var> nodes(static_cast<std::size_t>(n));
  nodes[0] = x;
  std::size_t ei = 0;
  // edges_ was built (j asc, i asc), so a single pass is in sync
  for (std::int64_t j = 1; j < n; ++j) {
    Var acc = backbone_[static_cast<std::size_t>(j - 1)].forward(
        nodes[static_cast<std::size_t>(j - 1)], training);
    for (std::int64_t i = 0; i < j; ++i, ++ei) {
      const Edge& e = edges_[ei];
      const nasgate::GateSample& gs = gates[ei];
      if (gs.active < 0 || gs.active >= static_cast<std::int64_t>(e.ops.size()))
        throw ValueError(msg("supercell forward: gate index ", gs.active,
                             " out of range for edge ", e.src, "->", e.dst));
      *e.gate_grad = 0.0;
      Var out = e.ops[static_cast<std::size_t>(gs.active)].forward(
          nodes[static_cast<std::size_t>(i)], training);
      acc = autograd::add(acc, gate_tap(out, e.gate_grad));
    }
    nodes[static_cast<std::size_t>(j)] = acc;
  }
  return nodes[static_cast<std::size_t>(n - 1)];
}

// ---- derivation ------------------------------------------------------------

CellGenotype derive_cell(const GroupPlan& plan, std::span<const OpKind> op_set,
                         std::span<const EdgeAlpha> edges, const RetainSpec& spec) {
  plan.validate();
  const std::int64_t n = plan.n_nodes();

  std::int64_t available = 0;
  for (OpKind k : op_set)
    if (!(spec.exclude_identity && k == OpKind::Identity)) ++available;

  CellGenotype geno;
  geno.n_nodes = n;
  geno.channels = plan.channels;
  geno.strides = plan.strides;

  struct Cand {
    double p;
    int kind_idx;       // canonical op number, lower wins ties
    std::int64_t dist;  // j - src, nearer wins ties
    std::size_t edge;
    std::size_t op_pos;  // position in op_set
  };
  auto better = [](const Cand& a, const Cand& b) {
    if (a.p != b.p) return a.p > b.p;
    if (a.kind_idx != b.kind_idx) return a.kind_idx < b.kind_idx;
    return a.dist < b.dist;
  };

  for (std::int64_t j = 1; j < n; ++j) {
    const int keep = (j == n - 1) ? spec.ops_output : spec.ops_inner;
    if (keep < 1) throw ValueError("retain spec: must keep at least one operation");
    if (keep > available)
      throw ValueError(msg("retain spec: keep ", keep, " operations but only ",
                           available, " candidates remain after exclusions"));

    std::vector<Cand> cands;
    for (std::size_t ei = 0; ei < edges.size(); ++ei) {
      const EdgeAlpha& e = edges[ei];
      if (e.dst != j) continue;
      if (e.alpha.size() != op_set.size())
        throw ShapeError(msg("derive: edge ", e.src, "->", e.dst, " has ",
                             e.alpha.size(), " alphas for ", op_set.size(), " ops"));
      const std::vector<double> p = nasgate::path_weights(e.alpha);
      for (std::size_t oi = 0; oi < op_set.size(); ++oi) {
        if (spec.exclude_identity && op_set[oi] == OpKind::Identity) continue;
        cands.push_back(Cand{p[oi], static_cast<int>(op_set[oi]), j - e.src, ei, oi});
      }
    }
    if (cands.empty())
      throw ValueError(msg("derive: node ", j, " has no incoming candidates"));

    const Cand best = *std::min_element(
        cands.begin(), cands.end(),
        [&better](const Cand& a, const Cand& b) { return better(a, b); });
    const std::size_t chosen_edge = best.edge;

    std::vector<Cand> on_edge;
    for (const Cand& c : cands)
      if (c.edge == chosen_edge) on_edge.push_back(c);
    std::sort(on_edge.begin(), on_edge.end(), better);

    CellGenotype::NodeChoice nc;
    nc.pred = edges[chosen_edge].src;
    for (int t = 0; t < keep && t < static_cast<int>(on_edge.size()); ++t)
      nc.ops.emplace_back(edges[chosen_edge].src,
                          op_set[on_edge[static_cast<std::size_t>(t)].op_pos]);
    if (static_cast<int>(nc.ops.size()) < keep)
      throw ValueError(msg("derive: node ", j, " cannot retain ", keep,
                           " operations from its best edge"));
    geno.nodes.push_back(std::move(nc));
  }
  return geno;
}

// ---- SuperNetPlan ----------------------------------------------------------

void SuperNetPlan::validate() const {
  if (groups.empty()) throw ValueError("supernet plan: no groups");
  for (const auto& g : groups) g.validate();
  if (net.in_channels <= 0 || net.num_classes < 2)
    throw ValueError("supernet plan: need in_channels >= 1 and num_classes >= 2");
}

std::string SuperNetPlan::to_json() const {
  ordered_json j;
  j["type"] = "supernet";
  j["in_channels"] = net.in_channels;
  j["num_classes"] = net.num_classes;
  j["stem_kernel"] = net.stem_kernel;
  j["op_set"] = ordered_json::array();
  for (OpKind k : op_set) j["op_set"].push_back(std::string(op_name(k)));
  j["groups"] = ordered_json::array();
  for (const auto& g : groups) {
    ordered_json jg;
    jg["channels"] = g.channels;
    jg["strides"] = g.strides;
    j["groups"].push_back(std::move(jg));
  }
  return j.dump(2) + "\n";
}

SuperNetPlan SuperNetPlan::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(msg("supernet plan: invalid JSON: ", e.what()));
  }
  SuperNetPlan p;
  try {
    if (j.at("type").get<std::string>() != "supernet")
      throw IoError("supernet plan: wrong blob type");
    p.net.in_channels = j.at("in_channels").get<std::int64_t>();
    p.net.num_classes = j.at("num_classes").get<std::int64_t>();
    p.net.stem_kernel = j.at("stem_kernel").get<std::int64_t>();
    for (const auto& name : j.at("op_set"))
      p.op_set.push_back(op_from_name(name.get<std::string>()));
    for (const auto& jg : j.at("groups")) {
      GroupPlan g;
      g.channels = jg.at("channels").get<std::vector<std::int64_t>>();
      g.strides = jg.at("strides").get<std::vector<std::int64_t>>();
      p.groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(msg("supernet plan: missing or malformed field: ", e.what()));
  }
  p.validate();
  return p;
}

// ---- SuperNet ---------------------------------------------------------------

SuperNet::SuperNet(const SuperNetPlan& plan, std::uint64_t seed) : plan_(plan) {
  plan_.validate();
  if (plan_.op_set.empty()) {
    const auto all = all_op_kinds();
    plan_.op_set.assign(all.begin(), all.end());
  }

  autograd::ConvSpec stem_spec;
  stem_spec.c_in = plan_.net.in_channels;
  stem_spec.c_out = plan_.groups[0].channels[0];
  stem_spec.kernel_h = stem_spec.kernel_w = plan_.net.stem_kernel;
  stem_spec.padding = (plan_.net.stem_kernel - 1) / 2;
  stem_ = unit::make_conv_unit(reg_, "stem", stem_spec, NetMode::Search,
                               /*will_binarize=*/false, seed);

  for (std::size_t g = 0; g < plan_.groups.size(); ++g) {
    if (g > 0 && plan_.groups[g].channels[0] != plan_.groups[g - 1].channels.back())
      throw ValueError(msg("supernet plan: group ", g, " input channels ",
                           plan_.groups[g].channels[0],
                           " do not match previous group output ",
                           plan_.groups[g - 1].channels.back()));
    cells_.emplace_back(reg_, "cells." + std::to_string(g), plan_.groups[g],
                        plan_.op_set, seed);
  }
  for (std::size_t g = 0; g < cells_.size(); ++g)
    for (auto& e : cells_[g].edges())
      alpha_names_.push_back("cells." + std::to_string(g) + ".edge." +
                             std::to_string(e.src) + "." + std::to_string(e.dst) +
                             ".alpha");

  const std::int64_t feat = plan_.groups.back().channels.back();
  Rng rng = Rng::substream(seed, "head.w");
  head_w_ = reg_.add("head.w",
                     Tensor::randn(Shape{plan_.net.num_classes, feat}, rng,
                                   1.0 / std::sqrt(static_cast<double>(feat))));
}

Var SuperNet::forward(const Tensor& images,
                      std::span<const nasgate::GateSample> gates, bool training) {
  if (static_cast<std::int64_t>(gates.size()) != total_edges())
    throw ValueError(msg("supernet forward: ", gates.size(), " gates for ",
                         total_edges(), " edges"));
  Var h = stem_.forward(Var::constant(images), training);
  std::size_t offset = 0;
  for (auto& c : cells_) {
    const std::size_t ne = static_cast<std::size_t>(c.num_edges());
    h = c.forward(h, gates.subspan(offset, ne), training);
    offset += ne;
  }
  Var pooled = autograd::global_avg_pool(h);
  return autograd::linear(pooled, head_w_);
}

std::int64_t SuperNet::total_edges() const {
  std::int64_t n = 0;
  for (const auto& c : cells_) n += c.num_edges();
  return n;
}

std::vector<SuperCell::Edge*> SuperNet::edge_list() {
  std::vector<SuperCell::Edge*> out;
  for (auto& c : cells_)
    for (auto& e : c.edges()) out.push_back(&e);
  return out;
}

std::vector<Var> SuperNet::weight_params() { return reg_.values(); }

std::vector<Var> SuperNet::alpha_params() {
  std::vector<Var> out;
  for (auto& c : cells_)
    for (auto& e : c.edges()) out.push_back(e.alpha);
  return out;
}

std::vector<std::pair<std::string, Tensor>> SuperNet::state_tensors() const {
  auto out = collect_state(reg_);
  std::size_t idx = 0;
  for (const auto& c : cells_)
    for (const auto& e : c.edges())
      out.emplace_back(alpha_names_[idx++], e.alpha.value());
  return out;
}

void SuperNet::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  apply_state(reg_, tensors);
  std::size_t idx = 0;
  for (auto& c : cells_) {
    for (auto& e : c.edges()) {
      const std::string& name = alpha_names_[idx++];
      bool found = false;
      for (const auto& [n, t] : tensors) {
        if (n != name) continue;
        if (!t.same_shape(e.alpha.value()))
          throw IoError(msg("checkpoint: tensor '", name, "' has shape ",
                            shape_str(t.shape()), ", model expects ",
                            shape_str(e.alpha.value().shape())));
        e.alpha.mutable_value() = t;
        found = true;
        break;
      }
      if (!found) throw IoError(msg("checkpoint: missing tensor '", name, "'"));
    }
  }
}

Genotype derive(const SuperNet& net, const RetainSpec& spec) {
  Genotype g;
  g.variant = std::string(variant_name(spec.variant));
  for (const auto& c : net.cells()) {
    std::vector<EdgeAlpha> edges;
    for (const auto& e : c.edges()) {
      EdgeAlpha ea;
      ea.src = e.src;
      ea.dst = e.dst;
      ea.alpha = e.alpha.value().vec();
      edges.push_back(std::move(ea));
    }
    g.cells.push_back(derive_cell(c.plan(), c.op_set(), edges, spec));
  }
  g.validate();
  return g;
}

// ---- Network ----------------------------------------------------------------

Network::Network(const Genotype& genotype, NetMode mode,
                 const PrecisionPolicy& policy, const NetConfig& config,
                 std::uint64_t seed)
    : genotype_(genotype), mode_(mode), policy_(policy), config_(config) {
  genotype_.validate();
  const int branches = RetainSpec::for_variant(variant_from_name(genotype_.variant)).branches;

  autograd::ConvSpec stem_spec;
  stem_spec.c_in = config_.in_channels;
  stem_spec.c_out = genotype_.cells[0].channels[0];
  stem_spec.kernel_h = stem_spec.kernel_w = config_.stem_kernel;
  stem_spec.padding = (config_.stem_kernel - 1) / 2;
  // The stem is a binarization point only if the policy does not exempt it;
  // tanh/sign placement in Full mode must match the Binary instantiation.
  const bool stem_binarize = policy_.binarize && !policy_.exempt_first_conv;
  stem_ = unit::make_conv_unit(reg_, "stem", stem_spec, mode, stem_binarize, seed);

  for (std::size_t ci = 0; ci < genotype_.cells.size(); ++ci) {
    const CellGenotype& cg = genotype_.cells[ci];
    if (ci > 0 && cg.channels[0] != genotype_.cells[ci - 1].channels.back())
      throw ValueError(msg("genotype: cell ", ci, " input channels do not chain"));
    CellInst inst;
    for (int b = 0; b < branches; ++b) {
      BranchInst br;
      const std::string bprefix = "cells." + std::to_string(ci) + ".branch." +
                                  std::to_string(b);
      for (std::int64_t j = 1; j < cg.n_nodes; ++j) {
        NodeInst node;
        autograd::ConvSpec spec;
        spec.c_in = cg.channels[static_cast<std::size_t>(j - 1)];
        spec.c_out = cg.channels[static_cast<std::size_t>(j)];
        spec.kernel_h = spec.kernel_w = 3;
        spec.stride = cg.strides[static_cast<std::size_t>(j - 1)];
        spec.padding = 1;
        node.backbone = unit::make_conv_unit(
            reg_, bprefix + ".backbone." + std::to_string(j), spec, mode,
            /*will_binarize=*/policy_.binarize, seed);

        const auto& nc = cg.nodes[static_cast<std::size_t>(j - 1)];
        node.pred_src = nc.pred;
        std::int64_t stride = 1;
        for (std::int64_t t = nc.pred; t < j; ++t)
          stride *= cg.strides[static_cast<std::size_t>(t)];
        for (std::size_t oi = 0; oi < nc.ops.size(); ++oi) {
          const auto& [src, kind] = nc.ops[oi];
          node.ops.push_back(make_cell_op(
              reg_,
              bprefix + ".node." + std::to_string(j) + ".op." + std::to_string(oi) +
                  "." + std::string(op_name(kind)),
              kind, cg.channels[static_cast<std::size_t>(src)],
              cg.channels[static_cast<std::size_t>(j)], stride, mode, policy_, seed));
        }
        br.nodes.push_back(std::move(node));
      }
      inst.branches.push_back(std::move(br));
    }
    cells_.push_back(std::move(inst));
  }

  const std::int64_t feat = genotype_.cells.back().channels.back();
  Rng rng = Rng::substream(seed, "head.w");
  head_w_ = reg_.add("head.w",
                     Tensor::randn(Shape{config_.num_classes, feat}, rng,
                                   1.0 / std::sqrt(static_cast<double>(feat))));
}

Var Network::forward(const Tensor& images, bool training) {
  Var h = stem_.forward(Var::constant(images), training);
  for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
    const CellGenotype& cg = genotype_.cells[ci];
    Var merged;
    for (auto& br : cells_[ci].branches) {
      std::vector<Var> nodes(static_cast<std::size_t>(cg.n_nodes));
      nodes[0] = h;
      for (std::int64_t j = 1; j < cg.n_nodes; ++j) {
        NodeInst& node = br.nodes[static_cast<std::size_t>(j - 1)];
        Var acc = node.backbone.forward(nodes[static_cast<std::size_t>(j - 1)], training);
        for (const auto& op : node.ops)
          acc = autograd::add(
              acc, op.forward(nodes[static_cast<std::size_t>(node.pred_src)], training));
        nodes[static_cast<std::size_t>(j)] = acc;
      }
      Var out = nodes[static_cast<std::size_t>(cg.n_nodes - 1)];
      merged = merged.defined() ? autograd::add(merged, out) : out;
    }
    h = merged;
  }
  Var pooled = autograd::global_avg_pool(h);
  return autograd::linear(pooled, head_w_);
}

std::vector<const unit::ConvUnit*> Network::conv_units() const {
  std::vector<const unit::ConvUnit*> out;
  out.push_back(&stem_);
  for (const auto& c : cells_)
    for (const auto& br : c.branches)
      for (const auto& node : br.nodes) {
        out.push_back(&node.backbone);
        for (const auto& op : node.ops)
          if (op.conv) out.push_back(&*op.conv);
      }
  return out;
}

std::vector<std::pair<std::string, Tensor>> Network::state_tensors() const {
  return collect_state(reg_);
}

void Network::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  apply_state(reg_, tensors);
}

// ---- state helpers -----------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> collect_state(const ParamRegistry& reg) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, var] : reg.params) out.emplace_back(name, var.value());
  for (const auto& [name, bn] : reg.bn_states) {
    if (!bn->running_mean.defined()) continue;
    out.emplace_back(name + ".running_mean", bn->running_mean);
    out.emplace_back(name + ".running_var", bn->running_var);
    out.emplace_back(name + ".batches",
                     Tensor::scalar(static_cast<double>(bn->batches_seen)));
  }
  return out;
}

void apply_state(ParamRegistry& reg,
                 const std::vector<std::pair<std::string, Tensor>>& tensors) {
  auto find = [&tensors](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  };
  for (auto& [name, var] : reg.params) {
    const Tensor* t = find(name);
    if (!t) throw IoError(msg("checkpoint: missing tensor '", name, "'"));
    if (!t->same_shape(var.value()))
      throw IoError(msg("checkpoint: tensor '", name, "' has shape ",
                        shape_str(t->shape()), ", model expects ",
                        shape_str(var.value().shape())));
    var.mutable_value() = *t;
  }
  for (auto& [name, bn] : reg.bn_states) {
    const Tensor* rm = find(name + ".running_mean");
    const Tensor* rv = find(name + ".running_var");
    const Tensor* bt = find(name + ".batches");
    if (!rm || !rv) continue;  // stats never initialized when saved
    bn->running_mean = *rm;
    bn->running_var = *rv;
    bn->batches_seen = bt ? static_cast<std::int64_t>((*bt)[0]) : 0;
  }
}

}  // namespace nasb::cell
