#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nasb/tensor.hpp"

namespace nasb::ckpt {

// NCKP checkpoint: magic, version, a JSON metadata blob (genotype or
// supernet plan plus run settings), the named tensor table, optimizer state
// tensors, and the RNG state words.
struct Checkpoint {
  std::uint32_t version = 1;
  std::string meta_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, Tensor>> opt_tensors;
  std::vector<std::uint64_t> rng_state;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const Tensor* find(const std::string& name) const;
};

}  // namespace nasb::ckpt
