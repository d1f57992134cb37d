#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nasb/autograd.hpp"
#include "nasb/binarize.hpp"
#include "nasb/genotype.hpp"
#include "nasb/nasgate.hpp"
#include "nasb/ops.hpp"
#include "nasb/policy.hpp"

namespace nasb::cell {

// What a model is instantiated for. Search models binarize and skip Relu;
// pretrain models are full precision with tanh at the binarization points;
// finetune models replace tanh with the activation sign STE.
enum class NetMode { Search, Full, Binary };

NetMode net_mode_from_name(std::string_view name);

// Channel/stride plan for one cell: channels per node (channels[0] is the
// input node), strides per backbone layer.
struct GroupPlan {
  std::vector<std::int64_t> channels;
  std::vector<std::int64_t> strides;

  std::int64_t n_nodes() const { return static_cast<std::int64_t>(channels.size()); }
  void validate() const;
};

struct NetConfig {
  std::int64_t in_channels = 1;
  std::int64_t num_classes = 2;
  std::int64_t stem_kernel = 3;
};

// Parameter/buffer registry shared by the supernet and derived networks.
struct ParamRegistry {
  std::vector<std::pair<std::string, autograd::Var>> params;
  std::vector<std::pair<std::string, autograd::BatchNormState*>> bn_states;

  autograd::Var add(const std::string& name, Tensor init);
  std::vector<autograd::Var> values() const;
};

namespace unit {

// conv -> (relu) -> bn, optionally preceded by tanh / sign on the input when
// the conv position is a binarization point.
struct ConvUnit {
  autograd::ConvSpec spec;
  autograd::Var weight;
  autograd::Var gamma, beta;
  std::shared_ptr<autograd::BatchNormState> bn;
  bool binarize_weights = false;
  binarize::ScaleGranularity scale_granularity = binarize::ScaleGranularity::PerFilter;
  bool entry_tanh = false;
  bool entry_sign = false;
  bool relu = false;

  autograd::Var forward(const autograd::Var& x, bool training) const;
};

ConvUnit make_conv_unit(ParamRegistry& reg, const std::string& name,
                        const autograd::ConvSpec& spec, NetMode mode,
                        bool will_binarize, std::uint64_t seed);

// pool -> channel pad -> bn
struct PoolUnit {
  OpKind kind = OpKind::MaxPool3;
  std::int64_t stride = 1;
  std::int64_t c_dst = 0;
  autograd::Var gamma, beta;
  std::shared_ptr<autograd::BatchNormState> bn;

  autograd::Var forward(const autograd::Var& x, bool training) const;
};

PoolUnit make_pool_unit(ParamRegistry& reg, const std::string& name, OpKind kind,
                        std::int64_t stride, std::int64_t c_dst);

}  // namespace unit

// One candidate operation instance on an edge (also the retained op of a
// derived network node).
struct CellOp {
  OpKind kind = OpKind::Zero;
  std::int64_t stride = 1;  // cumulative stride between source and target node
  std::int64_t c_src = 0, c_dst = 0;
  std::optional<unit::ConvUnit> conv;
  std::optional<unit::PoolUnit> pool;

  autograd::Var forward(const autograd::Var& x, bool training) const;
};

CellOp make_cell_op(ParamRegistry& reg, const std::string& name, OpKind kind,
                    std::int64_t c_src, std::int64_t c_dst, std::int64_t stride,
                    NetMode mode, const PrecisionPolicy& policy, std::uint64_t seed);

// The searchable cell: a fixed backbone chain plus a DAG whose edges each
// carry every candidate operation and an architecture parameter vector.
class SuperCell {
 public:
  struct Edge {
    std::int64_t src = 0, dst = 0;
    std::vector<CellOp> ops;
    autograd::Var alpha;                 // M architecture parameters
    std::shared_ptr<double> gate_grad;   // d loss / d g of the sampled op
  };

  SuperCell(ParamRegistry& reg, const std::string& name_prefix,
            const GroupPlan& plan, std::span<const OpKind> op_set,
            std::uint64_t seed);

  std::int64_t n_nodes() const { return plan_.n_nodes(); }
  std::int64_t num_edges() const { return static_cast<std::int64_t>(edges_.size()); }
  const GroupPlan& plan() const { return plan_; }
  const std::vector<OpKind>& op_set() const { return op_set_; }

  std::vector<Edge>& edges() { return edges_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<unit::ConvUnit>& backbone() const { return backbone_; }

  // node_j = backbone_j(node_{j-1}) + sum of the sampled edge ops into j.
  autograd::Var forward(const autograd::Var& x,
                        std::span<const nasgate::GateSample> gates,
                        bool training) const;

 private:
  GroupPlan plan_;
  std::vector<OpKind> op_set_;
  std::vector<unit::ConvUnit> backbone_;
  std::vector<Edge> edges_;
};

// Cell description used at derivation time (alphas without weights).
struct EdgeAlpha {
  std::int64_t src = 0, dst = 0;
  std::vector<double> alpha;
};

// Applies the retain rules: one predecessor edge per node, the top-K
// operations on it ranked by path weight. Ties break to the lower operation
// index, then to the nearer source node.
CellGenotype derive_cell(const GroupPlan& plan, std::span<const OpKind> op_set,
                         std::span<const EdgeAlpha> edges, const RetainSpec& spec);

// ---- models ----------------------------------------------------------------

struct SuperNetPlan {
  NetConfig net;
  std::vector<GroupPlan> groups;
  std::vector<OpKind> op_set;  // empty = all ten

  void validate() const;
  std::string to_json() const;
  static SuperNetPlan from_json(const std::string& text);
};

// Search-stage model M_s: stem, supercells, classifier head. Weights are
// binarized per the policy; Relu is not present.
class SuperNet {
 public:
  SuperNet(const SuperNetPlan& plan, std::uint64_t seed);

  autograd::Var forward(const Tensor& images,
                        std::span<const nasgate::GateSample> gates, bool training);

  std::vector<SuperCell>& cells() { return cells_; }
  const std::vector<SuperCell>& cells() const { return cells_; }
  const SuperNetPlan& plan() const { return plan_; }

  std::int64_t total_edges() const;
  // Flattened edge list in forward order (cell major).
  std::vector<SuperCell::Edge*> edge_list();

  std::vector<autograd::Var> weight_params();  // everything except alphas
  std::vector<autograd::Var> alpha_params();
  ParamRegistry& registry() { return reg_; }

  std::vector<std::pair<std::string, Tensor>> state_tensors() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors);

 private:
  SuperNetPlan plan_;
  ParamRegistry reg_;
  unit::ConvUnit stem_;
  std::vector<SuperCell> cells_;
  autograd::Var head_w_;
  std::vector<std::string> alpha_names_;
};

Genotype derive(const SuperNet& net, const RetainSpec& spec);

// Derived model: stem, per-cell branch instances, classifier head.
class Network {
 public:
  Network(const Genotype& genotype, NetMode mode, const PrecisionPolicy& policy,
          const NetConfig& config, std::uint64_t seed);

  autograd::Var forward(const Tensor& images, bool training);

  const Genotype& genotype() const { return genotype_; }
  NetMode mode() const { return mode_; }
  const NetConfig& config() const { return config_; }
  const PrecisionPolicy& policy() const { return policy_; }

  std::vector<autograd::Var> params() { return reg_.values(); }
  ParamRegistry& registry() { return reg_; }

  std::vector<std::pair<std::string, Tensor>> state_tensors() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors);

  // The stem weight var; its latent values are never sign-quantized.
  const autograd::Var& stem_weight() const { return stem_.weight; }
  const unit::ConvUnit& stem_unit() const { return stem_; }
  // Every conv unit of the model (backbone then cell convs), for policy and
  // initialization checks.
  std::vector<const unit::ConvUnit*> conv_units() const;

 private:
  struct NodeInst {
    unit::ConvUnit backbone;
    std::vector<CellOp> ops;  // retained ops feeding this node
    std::int64_t pred_src = 0;
  };
  struct BranchInst {
    std::vector<NodeInst> nodes;
  };
  struct CellInst {
    std::vector<BranchInst> branches;
  };

  Genotype genotype_;
  NetMode mode_;
  PrecisionPolicy policy_;
  NetConfig config_;
  ParamRegistry reg_;
  unit::ConvUnit stem_;
  std::vector<CellInst> cells_;
  autograd::Var head_w_;
};

// Shared helpers for state round trips.
std::vector<std::pair<std::string, Tensor>> collect_state(const ParamRegistry& reg);
void apply_state(ParamRegistry& reg,
                 const std::vector<std::pair<std::string, Tensor>>& tensors);

}  // namespace nasb::cell
