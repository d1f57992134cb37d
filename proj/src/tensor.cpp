#include "nasb/tensor.hpp"

#include <cmath>

#include "nasb/error.hpp"

namespace nasb {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw ShapeError(msg("tensor extent ", i, " must be positive, got ", shape[i]));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError(msg("data length ", data_.size(), " does not match shape ",
                         shape_str(shape_)));
  }
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = rng.normal() * stddev;
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = rng.uniform(lo, hi);
  return t;
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other)) {
    throw ShapeError(msg("add_: shape ", shape_str(shape_), " vs ",
                         shape_str(other.shape_)));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::add_scaled_(const Tensor& other, double a) {
  if (!same_shape(other)) {
    throw ShapeError(msg("add_scaled_: shape ", shape_str(shape_), " vs ",
                         shape_str(other.shape_)));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * other.data_[i];
}

void Tensor::scale_(double a) {
  for (auto& x : data_) x *= a;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double x : data_) s += x;
  return s;
}

double Tensor::abs_max() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace nasb
