#include "nasb/genotype.hpp"

#include <fstream>

#include <json.hpp>

#include "nasb/error.hpp"
#include "nasb/io_util.hpp"

namespace nasb::cell {

using ordered_json = nlohmann::ordered_json;

std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::Zero: return "zero";
    case OpKind::AvgPool3: return "avg_pool_3x3";
    case OpKind::MaxPool3: return "max_pool_3x3";
    case OpKind::Identity: return "identity";
    case OpKind::Conv1: return "conv_1x1";
    case OpKind::Conv3: return "conv_3x3";
    case OpKind::Conv5: return "conv_5x5";
    case OpKind::DilConv1: return "dil_conv_1x1";
    case OpKind::DilConv3: return "dil_conv_3x3";
    case OpKind::DilConv5: return "dil_conv_5x5";
  }
  throw ValueError("op_name: unknown operation kind");
}

OpKind op_from_name(std::string_view name) {
  for (OpKind k : all_op_kinds())
    if (op_name(k) == name) return k;
  throw ValueError(msg("unknown operation kind '", name, "'"));
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Nasb: return "nasb";
    case Variant::V1: return "v1";
    case Variant::V2: return "v2";
    case Variant::V3: return "v3";
    case Variant::V4: return "v4";
    case Variant::V5: return "v5";
  }
  throw ValueError("variant_name: unknown variant");
}

Variant variant_from_name(std::string_view name) {
  for (Variant v : {Variant::Nasb, Variant::V1, Variant::V2, Variant::V3,
                    Variant::V4, Variant::V5})
    if (variant_name(v) == name) return v;
  throw ValueError(msg("unknown variant '", name, "'"));
}

RetainSpec RetainSpec::for_variant(Variant v) {
  RetainSpec s;
  s.variant = v;
  switch (v) {
    case Variant::Nasb:
    case Variant::V1:
      break;
    case Variant::V2:
      s.ops_output = 4;
      break;
    case Variant::V3:
      s.branches = 2;
      break;
    case Variant::V4:
      s.ops_inner = 4;
      s.ops_output = 4;
      s.exclude_identity = true;
      break;
    case Variant::V5:
      s.ops_inner = 6;
      s.ops_output = 8;
      break;
  }
  return s;
}

void CellGenotype::validate() const {
  if (n_nodes < 2) throw ValueError(msg("cell genotype: n_nodes must be >= 2, got ", n_nodes));
  if (static_cast<std::int64_t>(channels.size()) != n_nodes)
    throw ValueError(msg("cell genotype: ", channels.size(), " channel entries for ",
                         n_nodes, " nodes"));
  if (static_cast<std::int64_t>(strides.size()) != n_nodes - 1)
    throw ValueError(msg("cell genotype: ", strides.size(), " stride entries for ",
                         n_nodes - 1, " backbone layers"));
  if (static_cast<std::int64_t>(nodes.size()) != n_nodes - 1)
    throw ValueError(msg("cell genotype: ", nodes.size(), " node choices for ",
                         n_nodes - 1, " non-input nodes"));
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const std::int64_t node_id = static_cast<std::int64_t>(j) + 1;
    const auto& nc = nodes[j];
    if (nc.pred < 0 || nc.pred >= node_id)
      throw ValueError(msg("cell genotype: node ", node_id, " has invalid predecessor ",
                           nc.pred));
    if (nc.ops.empty())
      throw ValueError(msg("cell genotype: node ", node_id, " retains no operation"));
    for (const auto& [src, kind] : nc.ops) {
      (void)kind;
      if (src != nc.pred)
        throw ValueError(msg("cell genotype: node ", node_id,
                             " retains an op from node ", src,
                             " but its predecessor is ", nc.pred));
    }
  }
}

void Genotype::validate() const {
  variant_from_name(variant);
  if (cells.empty()) throw ValueError("genotype: no cells");
  for (const auto& c : cells) c.validate();
}

std::string Genotype::to_json() const {
  ordered_json root;
  root["version"] = version;
  root["variant"] = variant;
  root["cells"] = ordered_json::array();
  for (const auto& c : cells) {
    ordered_json jc;
    jc["n_nodes"] = c.n_nodes;
    jc["channels"] = c.channels;
    jc["strides"] = c.strides;
    jc["nodes"] = ordered_json::array();
    for (const auto& nc : c.nodes) {
      ordered_json jn;
      jn["pred"] = nc.pred;
      jn["ops"] = ordered_json::array();
      for (const auto& [src, kind] : nc.ops) {
        ordered_json jo;
        jo["src"] = src;
        jo["kind"] = std::string(op_name(kind));
        jn["ops"].push_back(std::move(jo));
      }
      jc["nodes"].push_back(std::move(jn));
    }
    root["cells"].push_back(std::move(jc));
  }
  return root.dump(2) + "\n";
}

Genotype Genotype::from_json(const std::string& text) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(msg("genotype: invalid JSON: ", e.what()));
  }
  Genotype g;
  try {
    g.version = root.at("version").get<int>();
    g.variant = root.at("variant").get<std::string>();
    for (const auto& jc : root.at("cells")) {
      CellGenotype c;
      c.n_nodes = jc.at("n_nodes").get<std::int64_t>();
      c.channels = jc.at("channels").get<std::vector<std::int64_t>>();
      c.strides = jc.at("strides").get<std::vector<std::int64_t>>();
      for (const auto& jn : jc.at("nodes")) {
        CellGenotype::NodeChoice nc;
        nc.pred = jn.at("pred").get<std::int64_t>();
        for (const auto& jo : jn.at("ops"))
          nc.ops.emplace_back(jo.at("src").get<std::int64_t>(),
                              op_from_name(jo.at("kind").get<std::string>()));
        c.nodes.push_back(std::move(nc));
      }
      g.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(msg("genotype: missing or malformed field: ", e.what()));
  }
  if (g.version != 1) throw IoError(msg("genotype: unsupported version ", g.version));
  g.validate();
  return g;
}

void Genotype::save(const std::string& path) const {
  io::atomic_write(path, to_json());
}

Genotype Genotype::load(const std::string& path) {
  return from_json(io::read_file(path));
}

}  // namespace nasb::cell
