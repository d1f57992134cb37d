#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nasb/tensor.hpp"

namespace nasb::data {

struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<std::int64_t> labels;
  std::int64_t num_classes = 0;

  std::int64_t size() const { return images.defined() ? images.dim(0) : 0; }
  void validate() const;
};

enum class Difficulty { Trivial, Easy, Medium, Hard };
Difficulty difficulty_from_name(const std::string& name);

struct SynthSpec {
  std::int64_t classes = 2;
  std::int64_t samples = 2000;
  std::int64_t image_size = 16;
  std::int64_t channels = 1;
  Difficulty difficulty = Difficulty::Easy;
  std::uint64_t seed = 1;
};

// Class-conditional images: constant intensities at "trivial", oriented
// stripe textures plus noise otherwise. Deterministic per seed.
Dataset gen_synthetic(const SynthSpec& spec);

// NTSR tensor file: magic, u8 version, u8 dtype (0 = f32, 1 = f64), u8 rank,
// rank x u32 extents (little endian), row-major payload.
void save_tensor(const std::string& path, const Tensor& t, bool as_f32 = true);
Tensor load_tensor(const std::string& path);

// NLBL label file: magic, u32 count, count x u32.
void save_labels(const std::string& path, const std::vector<std::int64_t>& labels);
std::vector<std::int64_t> load_labels(const std::string& path);

Dataset load_dataset(const std::string& images_path, const std::string& labels_path);
void save_dataset(const Dataset& ds, const std::string& images_path,
                  const std::string& labels_path);

}  // namespace nasb::data
