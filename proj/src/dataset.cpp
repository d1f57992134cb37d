#include "nasb/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nasb/error.hpp"
#include "nasb/io_util.hpp"
#include "nasb/serialize.hpp"

namespace nasb::data {

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4)
    throw ShapeError("dataset: images must be a rank-4 tensor");
  if (static_cast<std::int64_t>(labels.size()) != images.dim(0))
    throw ShapeError(msg("dataset: ", labels.size(), " labels for ", images.dim(0),
                         " images"));
  if (num_classes < 2) throw ValueError("dataset: need at least two classes");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ValueError(msg("dataset: label ", labels[i], " at index ", i,
                           " out of class range [0,", num_classes, ")"));
}

Difficulty difficulty_from_name(const std::string& name) {
  if (name == "trivial") return Difficulty::Trivial;
  if (name == "easy") return Difficulty::Easy;
  if (name == "medium") return Difficulty::Medium;
  if (name == "hard") return Difficulty::Hard;
  throw ValueError(msg("unknown difficulty '", name, "' (trivial|easy|medium|hard)"));
}

Dataset gen_synthetic(const SynthSpec& spec) {
  if (spec.classes < 2)
    throw ValueError(msg("gen_synthetic: need classes >= 2, got ", spec.classes));
  if (spec.samples < spec.classes)
    throw ValueError("gen_synthetic: need at least one sample per class");
  if (spec.image_size < 8)
    throw ValueError(msg("gen_synthetic: image size ", spec.image_size,
                         " too small for the pattern scale (need >= 8)"));
  if (spec.channels < 1) throw ValueError("gen_synthetic: need channels >= 1");

  const std::int64_t n = spec.samples, s = spec.image_size, c = spec.channels;
  Dataset ds;
  ds.num_classes = spec.classes;
  ds.images = Tensor(Shape{n, c, s, s});
  ds.labels.resize(static_cast<std::size_t>(n));

  Rng label_rng = Rng::substream(spec.seed, "labels");
  Rng noise_rng = Rng::substream(spec.seed, "noise");
  Rng jitter_rng = Rng::substream(spec.seed, "jitter");

  const double pi = 3.14159265358979323846;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t label = label_rng.uniform_int(spec.classes);
    ds.labels[static_cast<std::size_t>(i)] = label;

    if (spec.difficulty == Difficulty::Trivial) {
      // Disjoint constant intensities per class; noise stays well inside the
      // gap so a nearest-mean classifier is exact.
      const double base =
          static_cast<double>(label + 1) / static_cast<double>(spec.classes + 1);
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < s; ++y)
          for (std::int64_t x = 0; x < s; ++x)
            ds.images.at(i, ch, y, x) = base + 0.01 * noise_rng.normal();
      continue;
    }

    // Oriented stripes: class k gets angle k*pi/classes. Frequency is fixed;
    // "easy" keeps the phase aligned so raw pixels stay linearly separable,
    // harder levels add phase/frequency jitter and noise.
    const double angle = pi * static_cast<double>(label) / static_cast<double>(spec.classes);
    double freq = 3.0 / static_cast<double>(s);
    double noise_sigma = 0.35;
    double phase = 0.0;
    if (spec.difficulty == Difficulty::Medium) {
      noise_sigma = 0.7;
      phase = jitter_rng.uniform(0.0, 2.0 * pi);
    } else if (spec.difficulty == Difficulty::Hard) {
      noise_sigma = 1.2;
      phase = jitter_rng.uniform(0.0, 2.0 * pi);
      freq *= jitter_rng.uniform(0.8, 1.25);
    }
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < s; ++y)
        for (std::int64_t x = 0; x < s; ++x) {
          const double proj = ca * static_cast<double>(x) + sa * static_cast<double>(y);
          const double v = std::sin(2.0 * pi * freq * proj + phase);
          ds.images.at(i, ch, y, x) = v + noise_sigma * noise_rng.normal();
        }
  }
  return ds;
}

// ---- binary formats ----------------------------------------------------------

namespace {

constexpr char kTensorMagic[4] = {'N', 'T', 'S', 'R'};
constexpr char kLabelMagic[4] = {'N', 'L', 'B', 'L'};

}  // namespace

void save_tensor(const std::string& path, const Tensor& t, bool as_f32) {
  if (!t.defined()) throw ValueError("save_tensor: undefined tensor");
  if (t.rank() > 255) throw ValueError("save_tensor: rank too large");
  serialize::Writer w;
  w.bytes(kTensorMagic, 4);
  w.u8(1);  // version
  w.u8(as_f32 ? 0 : 1);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) {
    if (t.dim(i) > UINT32_MAX) throw ValueError("save_tensor: extent too large");
    w.u32(static_cast<std::uint32_t>(t.dim(i)));
  }
  if (as_f32)
    for (std::int64_t i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t[i]));
  else
    for (std::int64_t i = 0; i < t.size(); ++i) w.f64(t[i]);
  io::atomic_write(path, w.take());
}

Tensor load_tensor(const std::string& path) {
  serialize::Reader r(io::read_file(path), path);
  r.expect_magic(kTensorMagic, 4, "NTSR");
  const std::uint8_t version = r.u8();
  if (version != 1)
    throw IoError(msg(path, ": unsupported NTSR version ", static_cast<int>(version)));
  const std::uint8_t dtype = r.u8();
  if (dtype > 1)
    throw IoError(msg(path, ": unknown NTSR dtype ", static_cast<int>(dtype)));
  const std::uint8_t rank = r.u8();
  if (rank == 0) throw IoError(msg(path, ": NTSR rank must be at least 1"));
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  const std::int64_t count = shape_numel(shape);
  std::vector<double> values(static_cast<std::size_t>(count));
  if (dtype == 0)
    for (auto& v : values) v = static_cast<double>(r.f32());
  else
    for (auto& v : values) v = r.f64();
  r.expect_end();
  return Tensor(std::move(shape), std::move(values));
}

void save_labels(const std::string& path, const std::vector<std::int64_t>& labels) {
  serialize::Writer w;
  w.bytes(kLabelMagic, 4);
  w.u32(static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) {
    if (l < 0 || l > UINT32_MAX) throw ValueError(msg("save_labels: label ", l, " out of range"));
    w.u32(static_cast<std::uint32_t>(l));
  }
  io::atomic_write(path, w.take());
}

std::vector<std::int64_t> load_labels(const std::string& path) {
  serialize::Reader r(io::read_file(path), path);
  r.expect_magic(kLabelMagic, 4, "NLBL");
  const std::uint32_t count = r.u32();
  std::vector<std::int64_t> labels(count);
  for (auto& l : labels) l = r.u32();
  r.expect_end();
  return labels;
}

Dataset load_dataset(const std::string& images_path, const std::string& labels_path) {
  Dataset ds;
  ds.images = load_tensor(images_path);
  if (ds.images.rank() != 4)
    throw IoError(msg(images_path, ": expected a rank-4 image tensor, got rank ",
                      ds.images.rank()));
  ds.labels = load_labels(labels_path);
  std::int64_t mx = 1;
  for (auto l : ds.labels) mx = std::max(mx, l + 1);
  ds.num_classes = std::max<std::int64_t>(mx, 2);
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& images_path,
                  const std::string& labels_path) {
  ds.validate();
  save_tensor(images_path, ds.images, /*as_f32=*/true);
  save_labels(labels_path, ds.labels);
}

}  // namespace nasb::data
