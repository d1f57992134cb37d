#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nasb/autograd.hpp"
#include "nasb/cell.hpp"
#include "nasb/genotype.hpp"
#include "nasb/ops.hpp"
#include "nasb/policy.hpp"

namespace nasb::costmodel {

// Raw counters of one operation instance. bitwise_ops follows the
// XNOR+popcount convention (two bitwise operations per binary MAC);
// real_ops are multiply-accumulate units.
struct OpCost {
  double bitwise_ops = 0;
  double binary_params = 0;
  double real_ops = 0;
  double real_params = 0;

  OpCost& operator+=(const OpCost& o) {
    bitwise_ops += o.bitwise_ops;
    binary_params += o.binary_params;
    real_ops += o.real_ops;
    real_params += o.real_params;
    return *this;
  }
};

// Cost of one cell operation for a per-image (N = 1) accounting. d is the
// bit width of pooled values. Binary convolutions land in the bitwise/binary
// counters; dilation changes nothing; pooling costs 8d (max) / 16d (avg) per
// output and has no parameters.
OpCost op_cost(cell::OpKind kind, const autograd::ConvSpec& spec,
               std::int64_t out_h, std::int64_t out_w, double d = 32.0);

// One layer of a fully shape-resolved network description.
struct LayerDesc {
  enum class Kind { Conv, Linear, BatchNorm, MaxPool, AvgPool, Identity, Zero };

  std::string name;
  Kind kind = Kind::Conv;

  autograd::ConvSpec conv;  // Conv
  std::int64_t out_h = 0, out_w = 0;

  std::int64_t channels = 0;      // BatchNorm / pools
  std::int64_t window_elems = 9;  // pooling window size in elements

  std::int64_t in_features = 0, out_features = 0;  // Linear
  bool bias = false;

  // Policy targets.
  bool first = false;
  bool classifier = false;
  bool downsample = false;
};

struct CostOptions {
  double d = 32.0;        // pooling bit width
  double divisor = 64.0;  // bitwise parallelism: flops += bitwise / (2 * divisor)
};

struct LayerCost {
  std::string name;
  std::string precision;  // "real" | "binary"
  OpCost cost;
};

struct CostReport {
  double memory_bits = 0;
  double flops = 0;
  double memory_saving = 1.0;  // reference memory / this memory
  double speedup = 1.0;        // reference flops / this flops
  double real_params = 0, binary_params = 0, real_ops = 0, bitwise_ops = 0;
  double reference_memory_bits = 0, reference_flops = 0;
  std::vector<LayerCost> layers;

  std::string to_json() const;
  std::string to_table() const;
};

// Applies the precision policy to the layer list, sums per-layer costs and
// reports memory/flops against the reference (the same layers, all real,
// unless an explicit reference is given). Binarized layers contribute one
// real scaling coefficient per output filter.
CostReport model_cost(const std::vector<LayerDesc>& layers,
                      const PrecisionPolicy& policy, const CostOptions& options,
                      const std::vector<LayerDesc>* reference = nullptr);

// Built-in reference architectures: resnet18 | resnet34 | resnet50 plus
// bireal- and nasb- prefixed presets. bireal presets are the plain resnet
// layers meant for the binary policy; nasb presets add the derived cell
// operations stated for each depth.
bool is_reference_name(const std::string& name);
std::vector<std::string> reference_names();
std::vector<LayerDesc> reference_model(const std::string& name,
                                       std::int64_t input_hw = 224);

// Default policy a preset is meant to be costed with.
PrecisionPolicy reference_default_policy(const std::string& name);

// Layers of a derived network (stem + cells + head), mirroring
// cell::Network's structure.
struct GenotypeCostConfig {
  std::int64_t in_channels = 1;
  std::int64_t input_hw = 16;
  std::int64_t num_classes = 2;
  std::int64_t stem_kernel = 3;
};
std::vector<LayerDesc> genotype_layers(const cell::Genotype& genotype,
                                       const GenotypeCostConfig& config);

}  // namespace nasb::costmodel
