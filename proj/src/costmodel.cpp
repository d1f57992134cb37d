#include "nasb/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "nasb/error.hpp"

namespace nasb::costmodel {

using cell::OpKind;
using ordered_json = nlohmann::ordered_json;

OpCost op_cost(OpKind kind, const autograd::ConvSpec& spec, std::int64_t out_h,
               std::int64_t out_w, double d) {
  if (d <= 0) throw ValueError(msg("op_cost: pooling bit width must be positive, got ", d));
  if (out_h < 1 || out_w < 1)
    throw ValueError(msg("op_cost: unresolved output extent ", out_h, "x", out_w));
  OpCost c;
  const double outputs = static_cast<double>(out_h * out_w);
  switch (kind) {
    case OpKind::Zero:
    case OpKind::Identity:
      return c;
    case OpKind::MaxPool3:
      c.bitwise_ops = 8.0 * d * static_cast<double>(spec.c_in) * outputs;
      return c;
    case OpKind::AvgPool3:
      c.bitwise_ops = 16.0 * d * static_cast<double>(spec.c_in) * outputs;
      return c;
    case OpKind::Conv1:
    case OpKind::Conv3:
    case OpKind::Conv5:
    case OpKind::DilConv1:
    case OpKind::DilConv3:
    case OpKind::DilConv5: {
      const double k2 = static_cast<double>(spec.kernel_h * spec.kernel_w);
      const double macs =
          static_cast<double>(spec.c_out) * outputs * static_cast<double>(spec.c_in) * k2;
      c.bitwise_ops = 2.0 * macs;
      c.binary_params = static_cast<double>(spec.c_out * spec.c_in) * k2;
      return c;
    }
  }
  throw ValueError("op_cost: unknown operation kind");
}

namespace {

bool layer_binarized(const LayerDesc& l, const PrecisionPolicy& policy) {
  if (!policy.binarize) return false;
  switch (l.kind) {
    case LayerDesc::Kind::Conv:
      if (l.first && policy.exempt_first_conv) return false;
      if (l.downsample && policy.exempt_downsample) return false;
      if (l.conv.kernel_h == 1 && l.conv.kernel_w == 1 && policy.exempt_1x1)
        return false;
      return true;
    case LayerDesc::Kind::Linear:
      return !(l.classifier && policy.exempt_classifier);
    default:
      return false;  // BN, pools, identity, zero have no weights to binarize
  }
}

OpCost layer_cost(const LayerDesc& l, bool binary, const CostOptions& opt) {
  OpCost c;
  switch (l.kind) {
    case LayerDesc::Kind::Conv: {
      const double k2 = static_cast<double>(l.conv.kernel_h * l.conv.kernel_w);
      const double params = static_cast<double>(l.conv.c_out * l.conv.c_in) * k2;
      const double macs = static_cast<double>(l.conv.c_out * l.out_h * l.out_w) *
                          static_cast<double>(l.conv.c_in) * k2;
      if (binary) {
        c.binary_params = params;
        c.bitwise_ops = 2.0 * macs;
        c.real_params = static_cast<double>(l.conv.c_out);  // scaling coefficients
      } else {
        c.real_params = params;
        c.real_ops = macs;
        if (l.bias) {
          c.real_params += static_cast<double>(l.conv.c_out);
          c.real_ops += static_cast<double>(l.conv.c_out * l.out_h * l.out_w);
        }
      }
      return c;
    }
    case LayerDesc::Kind::Linear: {
      const double params = static_cast<double>(l.in_features * l.out_features);
      const double macs = params;
      if (binary) {
        c.binary_params = params;
        c.bitwise_ops = 2.0 * macs;
        c.real_params = static_cast<double>(l.out_features);
      } else {
        c.real_params = params;
        c.real_ops = macs;
        if (l.bias) {
          c.real_params += static_cast<double>(l.out_features);
          c.real_ops += static_cast<double>(l.out_features);
        }
      }
      return c;
    }
    case LayerDesc::Kind::BatchNorm:
      c.real_params = 2.0 * static_cast<double>(l.channels);
      return c;
    case LayerDesc::Kind::MaxPool:
      c.bitwise_ops = static_cast<double>(l.window_elems - 1) * opt.d *
                      static_cast<double>(l.channels * l.out_h * l.out_w);
      return c;
    case LayerDesc::Kind::AvgPool:
      c.bitwise_ops = 2.0 * static_cast<double>(l.window_elems - 1) * opt.d *
                      static_cast<double>(l.channels * l.out_h * l.out_w);
      return c;
    case LayerDesc::Kind::Identity:
    case LayerDesc::Kind::Zero:
      return c;
  }
  throw ValueError("layer_cost: unknown layer kind");
}

std::pair<double, double> totals(const std::vector<LayerDesc>& layers,
                                 const PrecisionPolicy& policy,
                                 const CostOptions& opt, CostReport* report) {
  OpCost sum;
  for (const auto& l : layers) {
    const bool binary = layer_binarized(l, policy);
    const OpCost c = layer_cost(l, binary, opt);
    sum += c;
    if (report)
      report->layers.push_back({l.name, binary ? "binary" : "real", c});
  }
  const double memory = 32.0 * sum.real_params + sum.binary_params;
  const double flops = sum.real_ops + sum.bitwise_ops / (2.0 * opt.divisor);
  if (report) {
    report->real_params = sum.real_params;
    report->binary_params = sum.binary_params;
    report->real_ops = sum.real_ops;
    report->bitwise_ops = sum.bitwise_ops;
    report->memory_bits = memory;
    report->flops = flops;
  }
  return {memory, flops};
}

}  // namespace

CostReport model_cost(const std::vector<LayerDesc>& layers,
                      const PrecisionPolicy& policy, const CostOptions& options,
                      const std::vector<LayerDesc>* reference) {
  if (options.divisor <= 0)
    throw ValueError(msg("model_cost: divisor must be positive, got ", options.divisor));
  CostReport report;
  totals(layers, policy, options, &report);
  const auto [ref_mem, ref_flops] =
      totals(reference ? *reference : layers, PrecisionPolicy::full(), options, nullptr);
  report.reference_memory_bits = ref_mem;
  report.reference_flops = ref_flops;
  report.memory_saving = report.memory_bits > 0 ? ref_mem / report.memory_bits : 1.0;
  report.speedup = report.flops > 0 ? ref_flops / report.flops : 1.0;
  return report;
}

std::string CostReport::to_json() const {
  ordered_json j;
  j["memory_bits"] = memory_bits;
  j["memory_mbit"] = memory_bits / 1e6;
  j["memory_saving"] = memory_saving;
  j["flops"] = flops;
  j["speedup"] = speedup;
  j["real_params"] = real_params;
  j["binary_params"] = binary_params;
  j["real_ops"] = real_ops;
  j["bitwise_ops"] = bitwise_ops;
  j["reference_memory_bits"] = reference_memory_bits;
  j["reference_flops"] = reference_flops;
  j["layers"] = ordered_json::array();
  for (const auto& l : layers) {
    ordered_json jl;
    jl["name"] = l.name;
    jl["precision"] = l.precision;
    jl["bitwise_ops"] = l.cost.bitwise_ops;
    jl["binary_params"] = l.cost.binary_params;
    jl["real_ops"] = l.cost.real_ops;
    jl["real_params"] = l.cost.real_params;
    j["layers"].push_back(std::move(jl));
  }
  return j.dump(2) + "\n";
}

std::string CostReport::to_table() const {
  std::ostringstream os;
  os << "layer                                    prec    Bo            Bp            "
        "real ops      real params\n";
  for (const auto& l : layers) {
    os << l.name;
    for (std::size_t i = l.name.size(); i < 41; ++i) os << ' ';
    os << l.precision << (l.precision.size() < 6 ? "    " : "  ");
    auto col = [&os](double v) {
      std::string s = std::to_string(static_cast<long long>(v));
      os << s;
      for (std::size_t i = s.size(); i < 14; ++i) os << ' ';
    };
    col(l.cost.bitwise_ops);
    col(l.cost.binary_params);
    col(l.cost.real_ops);
    col(l.cost.real_params);
    os << '\n';
  }
  os << "\nmemory usage : " << memory_bits / 1e6 << " Mbit\n";
  os << "memory saving: " << memory_saving << " x\n";
  os << "flops        : " << flops << "\n";
  os << "speedup      : " << speedup << " x\n";
  return os.str();
}

// ---- reference architectures -------------------------------------------------

namespace {

struct Builder {
  std::vector<LayerDesc> layers;
  std::int64_t res = 0;

  void conv(const std::string& name, std::int64_t c_in, std::int64_t c_out,
            std::int64_t k, std::int64_t stride, bool first = false,
            bool downsample = false, bool with_bn = true) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerDesc::Kind::Conv;
    l.conv.c_in = c_in;
    l.conv.c_out = c_out;
    l.conv.kernel_h = l.conv.kernel_w = k;
    l.conv.stride = stride;
    l.conv.padding = (k - 1) / 2;
    res = l.conv.out_h(res);
    if (res < 1)
      throw ShapeError(msg("layer '", name, "': unresolved output extent ", res));
    l.out_h = l.out_w = res;
    l.first = first;
    l.downsample = downsample;
    layers.push_back(l);
    if (with_bn) bn(name + ".bn", c_out);
  }

  // Convolution that does not advance the running resolution (parallel path).
  void conv_at(const std::string& name, std::int64_t c_in, std::int64_t c_out,
               std::int64_t k, std::int64_t stride, std::int64_t out_res,
               bool downsample) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerDesc::Kind::Conv;
    l.conv.c_in = c_in;
    l.conv.c_out = c_out;
    l.conv.kernel_h = l.conv.kernel_w = k;
    l.conv.stride = stride;
    l.conv.padding = (k - 1) / 2;
    l.out_h = l.out_w = out_res;
    l.downsample = downsample;
    layers.push_back(l);
    bn(name + ".bn", c_out);
  }

  void bn(const std::string& name, std::int64_t channels) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerDesc::Kind::BatchNorm;
    l.channels = channels;
    layers.push_back(l);
  }

  void max_pool(const std::string& name, std::int64_t channels, std::int64_t stride,
                std::int64_t window_elems = 9, bool with_bn = false) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerDesc::Kind::MaxPool;
    l.channels = channels;
    l.window_elems = window_elems;
    res = (res + 2 - 3) / stride + 1;
    if (res < 1)
      throw ShapeError(msg("layer '", name, "': unresolved output extent ", res));
    l.out_h = l.out_w = res;
    layers.push_back(l);
    if (with_bn) bn(name + ".bn", channels);
  }

  // Cell operation running in parallel with a backbone conv. Pooling acts on
  // the channels both nodes share; channel growth is zero padding (free).
  void cell_pool(const std::string& name, std::int64_t c_src, std::int64_t c_dst,
                 std::int64_t out_res) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerDesc::Kind::MaxPool;
    l.channels = std::min(c_src, c_dst);
    l.window_elems = 9;
    l.out_h = l.out_w = out_res;
    layers.push_back(l);
    bn(name + ".bn", c_dst);
  }

  void cell_identity(const std::string& name) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerDesc::Kind::Identity;
    layers.push_back(l);
  }

  void global_avg_pool(const std::string& name, std::int64_t channels) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerDesc::Kind::AvgPool;
    l.channels = channels;
    l.window_elems = res * res;
    l.out_h = l.out_w = 1;
    layers.push_back(l);
    res = 1;
  }

  void linear(const std::string& name, std::int64_t in_f, std::int64_t out_f,
              bool bias, bool classifier) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerDesc::Kind::Linear;
    l.in_features = in_f;
    l.out_features = out_f;
    l.bias = bias;
    l.classifier = classifier;
    layers.push_back(l);
  }
};

struct NasbCellSpec {
  // Retained cell op per backbone conv slot; empty = plain resnet.
  std::vector<OpKind> slots;
};

// Basic-block resnet (18/34). blocks per group, widths 64/128/256/512.
std::vector<LayerDesc> build_resnet_basic(const std::vector<int>& blocks,
                                          std::int64_t input_hw,
                                          const std::vector<OpKind>& cell_slots) {
  Builder b;
  b.res = input_hw;
  b.conv("conv1", 3, 64, 7, 2, /*first=*/true);
  b.max_pool("maxpool", 64, 2);

  const std::int64_t widths[4] = {64, 128, 256, 512};
  std::int64_t c_in = 64;
  std::size_t slot = 0;
  for (int g = 0; g < 4; ++g) {
    const std::int64_t w = widths[g];
    for (int blk = 0; blk < blocks[static_cast<std::size_t>(g)]; ++blk) {
      const bool down = g > 0 && blk == 0;
      const std::string base = "layer" + std::to_string(g + 1) + "." + std::to_string(blk);
      const std::int64_t res_before = b.res;
      b.conv(base + ".conv1", c_in, w, 3, down ? 2 : 1);
      if (!cell_slots.empty()) {
        const OpKind k = cell_slots[slot++];
        if (k == OpKind::MaxPool3)
          b.cell_pool(base + ".cell1", c_in, w, b.res);
        else if (k == OpKind::Identity)
          b.cell_identity(base + ".cell1");
        else
          throw ValueError("nasb basic preset: unsupported cell op");
      }
      (void)res_before;
      b.conv(base + ".conv2", w, w, 3, 1);
      if (!cell_slots.empty()) {
        const OpKind k = cell_slots[slot++];
        if (k == OpKind::MaxPool3)
          b.cell_pool(base + ".cell2", w, w, b.res);
        else if (k == OpKind::Identity)
          b.cell_identity(base + ".cell2");
        else
          throw ValueError("nasb basic preset: unsupported cell op");
      }
      if (down)
        b.conv_at(base + ".downsample", c_in, w, 1, 2, b.res, /*downsample=*/true);
      c_in = w;
    }
  }
  b.global_avg_pool("avgpool", 512);
  b.linear("fc", 512, 1000, /*bias=*/true, /*classifier=*/true);
  return std::move(b.layers);
}

// Bottleneck resnet50. stride_on_first_1x1 selects the original layout that
// puts the stride-2 on the block's leading 1x1 (the published full-precision
// flops correspond to it); the binary presets use the 3x3-stride layout.
std::vector<LayerDesc> build_resnet50(std::int64_t input_hw, bool stride_on_first_1x1,
                                      const std::vector<OpKind>& cell_slots) {
  Builder b;
  b.res = input_hw;
  b.conv("conv1", 3, 64, 7, 2, /*first=*/true);
  b.max_pool("maxpool", 64, 2);

  const int blocks[4] = {3, 4, 6, 3};
  const std::int64_t widths[4] = {64, 128, 256, 512};
  std::int64_t c_in = 64;
  std::size_t slot = 0;
  auto cell = [&](const std::string& name, std::int64_t c_src, std::int64_t c_dst,
                  std::int64_t out_res) {
    if (cell_slots.empty()) return;
    const OpKind k = cell_slots[slot++];
    if (k == OpKind::MaxPool3) {
      b.cell_pool(name, c_src, c_dst, out_res);
    } else if (k == OpKind::Identity) {
      b.cell_identity(name);
    } else if (k == OpKind::DilConv1) {
      LayerDesc l;
      l.name = name;
      l.kind = LayerDesc::Kind::Conv;
      l.conv.c_in = c_src;
      l.conv.c_out = c_dst;
      l.conv.kernel_h = l.conv.kernel_w = 1;
      l.conv.dilation = 2;
      l.out_h = l.out_w = out_res;
      b.layers.push_back(l);
      b.bn(name + ".bn", c_dst);
    } else {
      throw ValueError("nasb bottleneck preset: unsupported cell op");
    }
  };

  for (int g = 0; g < 4; ++g) {
    const std::int64_t w = widths[g];
    for (int blk = 0; blk < blocks[g]; ++blk) {
      const bool down = g > 0 && blk == 0;
      const std::string base = "layer" + std::to_string(g + 1) + "." + std::to_string(blk);
      const std::int64_t s1 = down && stride_on_first_1x1 ? 2 : 1;
      const std::int64_t s2 = down && !stride_on_first_1x1 ? 2 : 1;
      b.conv(base + ".conv1", c_in, w, 1, s1);
      cell(base + ".cell1", c_in, w, b.res);
      b.conv(base + ".conv2", w, w, 3, s2);
      cell(base + ".cell2", w, w, b.res);
      b.conv(base + ".conv3", w, 4 * w, 1, 1);
      cell(base + ".cell3", w, 4 * w, b.res);
      if (blk == 0)
        b.conv_at(base + ".downsample", c_in, 4 * w, 1, down ? 2 : 1, b.res,
                  /*downsample=*/true);
      c_in = 4 * w;
    }
  }
  b.global_avg_pool("avgpool", 2048);
  b.linear("fc", 2048, 1000, /*bias=*/true, /*classifier=*/true);
  return std::move(b.layers);
}

// Canonical cell compositions of the derived nasb presets. One retained op
// per backbone conv slot; identities sit at the tail slots of each group.
std::vector<OpKind> nasb_slots_resnet18() {
  // 4 groups x 4 slots; identity at the last slot of each group.
  std::vector<OpKind> s(16, OpKind::MaxPool3);
  for (int g = 0; g < 4; ++g) s[static_cast<std::size_t>(g * 4 + 3)] = OpKind::Identity;
  return s;  // 12 max pooling + 4 identity
}

std::vector<OpKind> nasb_slots_resnet34() {
  // groups of 6/8/12/6 slots; identity at the last three of each group.
  const int per_group[4] = {6, 8, 12, 6};
  std::vector<OpKind> s;
  for (int g = 0; g < 4; ++g) {
    for (int i = 0; i < per_group[g]; ++i)
      s.push_back(i >= per_group[g] - 3 ? OpKind::Identity : OpKind::MaxPool3);
  }
  return s;  // 20 max pooling + 12 identity
}

std::vector<OpKind> nasb_slots_resnet50() {
  // groups of 9/12/18/9 slots; one trailing identity per group plus two more
  // at the tail of the last group; the single 1x1 dilated conv leads group 1.
  const int per_group[4] = {9, 12, 18, 9};
  std::vector<OpKind> s;
  for (int g = 0; g < 4; ++g) {
    const int tail = g == 3 ? 3 : 1;
    for (int i = 0; i < per_group[g]; ++i)
      s.push_back(i >= per_group[g] - tail ? OpKind::Identity : OpKind::MaxPool3);
  }
  s[0] = OpKind::DilConv1;
  return s;  // 41 max pooling + 6 identity + 1 dilated 1x1
}

}  // namespace

std::vector<std::string> reference_names() {
  return {"resnet18",        "resnet34",        "resnet50",
          "bireal-resnet18", "bireal-resnet34", "bireal-resnet50",
          "nasb-resnet18",   "nasb-resnet34",   "nasb-resnet50"};
}

bool is_reference_name(const std::string& name) {
  const auto names = reference_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::vector<LayerDesc> reference_model(const std::string& name, std::int64_t input_hw) {
  if (input_hw < 32)
    throw ValueError(msg("reference model: input size ", input_hw, " too small"));
  if (name == "resnet18" || name == "bireal-resnet18")
    return build_resnet_basic({2, 2, 2, 2}, input_hw, {});
  if (name == "resnet34" || name == "bireal-resnet34")
    return build_resnet_basic({3, 4, 6, 3}, input_hw, {});
  if (name == "resnet50")
    return build_resnet50(input_hw, /*stride_on_first_1x1=*/true, {});
  if (name == "bireal-resnet50")
    return build_resnet50(input_hw, /*stride_on_first_1x1=*/false, {});
  if (name == "nasb-resnet18")
    return build_resnet_basic({2, 2, 2, 2}, input_hw, nasb_slots_resnet18());
  if (name == "nasb-resnet34")
    return build_resnet_basic({3, 4, 6, 3}, input_hw, nasb_slots_resnet34());
  if (name == "nasb-resnet50")
    return build_resnet50(input_hw, /*stride_on_first_1x1=*/false, nasb_slots_resnet50());
  throw ValueError(msg("unknown reference architecture '", name, "'"));
}

PrecisionPolicy reference_default_policy(const std::string& name) {
  if (name.rfind("bireal-", 0) == 0 || name.rfind("nasb-", 0) == 0)
    return PrecisionPolicy::binary();
  return PrecisionPolicy::full();
}

// ---- genotype networks --------------------------------------------------------

std::vector<LayerDesc> genotype_layers(const cell::Genotype& genotype,
                                       const GenotypeCostConfig& config) {
  genotype.validate();
  const int branches =
      cell::RetainSpec::for_variant(cell::variant_from_name(genotype.variant)).branches;

  Builder b;
  b.res = config.input_hw;
  b.conv("stem", config.in_channels, genotype.cells[0].channels[0],
         config.stem_kernel, 1, /*first=*/true);

  for (std::size_t ci = 0; ci < genotype.cells.size(); ++ci) {
    const cell::CellGenotype& cg = genotype.cells[ci];
    const std::int64_t res_in = b.res;
    std::int64_t res_out = res_in;
    for (int br = 0; br < branches; ++br) {
      b.res = res_in;
      const std::string prefix =
          "cells." + std::to_string(ci) + ".branch." + std::to_string(br);
      std::vector<std::int64_t> node_res(static_cast<std::size_t>(cg.n_nodes));
      node_res[0] = res_in;
      for (std::int64_t j = 1; j < cg.n_nodes; ++j) {
        const std::int64_t stride = cg.strides[static_cast<std::size_t>(j - 1)];
        b.conv(prefix + ".backbone." + std::to_string(j),
               cg.channels[static_cast<std::size_t>(j - 1)],
               cg.channels[static_cast<std::size_t>(j)], 3, stride);
        node_res[static_cast<std::size_t>(j)] = b.res;

        const auto& nc = cg.nodes[static_cast<std::size_t>(j - 1)];
        for (std::size_t oi = 0; oi < nc.ops.size(); ++oi) {
          const auto& [src, kind] = nc.ops[oi];
          const std::string name = prefix + ".node." + std::to_string(j) + ".op." +
                                   std::to_string(oi) + "." +
                                   std::string(cell::op_name(kind));
          const std::int64_t c_src = cg.channels[static_cast<std::size_t>(src)];
          const std::int64_t c_dst = cg.channels[static_cast<std::size_t>(j)];
          std::int64_t cum = 1;
          for (std::int64_t t = src; t < j; ++t)
            cum *= cg.strides[static_cast<std::size_t>(t)];
          const std::int64_t out_res = node_res[static_cast<std::size_t>(j)];
          if (kind == OpKind::MaxPool3 || kind == OpKind::AvgPool3) {
            LayerDesc l;
            l.name = name;
            l.kind = kind == OpKind::MaxPool3 ? LayerDesc::Kind::MaxPool
                                              : LayerDesc::Kind::AvgPool;
            l.channels = std::min(c_src, c_dst);
            l.window_elems = 9;
            l.out_h = l.out_w = out_res;
            b.layers.push_back(l);
            b.bn(name + ".bn", c_dst);
          } else if (kind == OpKind::Identity) {
            b.cell_identity(name);
          } else if (kind == OpKind::Zero) {
            LayerDesc l;
            l.name = name;
            l.kind = LayerDesc::Kind::Zero;
            b.layers.push_back(l);
          } else {
            LayerDesc l;
            l.name = name;
            l.kind = LayerDesc::Kind::Conv;
            l.conv.c_in = c_src;
            l.conv.c_out = c_dst;
            l.conv.kernel_h = l.conv.kernel_w = cell::conv_kernel(kind);
            l.conv.dilation = cell::conv_dilation(kind);
            l.conv.stride = cum;
            l.conv.padding = l.conv.dilation * (l.conv.kernel_h - 1) / 2;
            l.out_h = l.out_w = out_res;
            l.downsample = cum > 1;
            b.layers.push_back(l);
            b.bn(name + ".bn", c_dst);
          }
        }
      }
      res_out = b.res;
    }
    b.res = res_out;
  }

  const std::int64_t feat = genotype.cells.back().channels.back();
  b.global_avg_pool("avgpool", feat);
  b.linear("head", feat, config.num_classes, /*bias=*/false, /*classifier=*/true);
  return std::move(b.layers);
}

}  // namespace nasb::costmodel
