#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nasb/ops.hpp"

namespace nasb::cell {

// Derivation variants. The base rule keeps one predecessor and one operation
// per node; the variants widen the retained set.
enum class Variant { Nasb, V1, V2, V3, V4, V5 };

std::string_view variant_name(Variant v);
Variant variant_from_name(std::string_view name);

// How many operations to keep per node when deriving a genotype.
struct RetainSpec {
  Variant variant = Variant::Nasb;
  int ops_inner = 1;    // operations kept at inner nodes
  int ops_output = 1;   // operations kept at the cell output node
  bool exclude_identity = false;
  int branches = 1;     // parallel cell copies merged by addition

  static RetainSpec for_variant(Variant v);
};

// The derived architecture of one cell: per non-input node, one predecessor
// and the retained operations on that predecessor edge.
struct CellGenotype {
  struct NodeChoice {
    std::int64_t pred = 0;
    std::vector<std::pair<std::int64_t, OpKind>> ops;  // (source node, kind)
  };
  std::int64_t n_nodes = 0;
  std::vector<std::int64_t> channels;  // per node, channels[0] = input node
  std::vector<std::int64_t> strides;   // per backbone layer (n_nodes - 1)
  std::vector<NodeChoice> nodes;       // nodes 1 .. n_nodes-1

  void validate() const;
};

struct Genotype {
  int version = 1;
  std::string variant = "nasb";
  std::vector<CellGenotype> cells;

  void validate() const;

  // Canonical JSON with stable field order; serialize(parse(x)) == x byte
  // for byte.
  std::string to_json() const;
  static Genotype from_json(const std::string& text);

  void save(const std::string& path) const;
  static Genotype load(const std::string& path);
};

}  // namespace nasb::cell
