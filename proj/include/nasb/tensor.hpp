#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nasb/rng.hpp"

namespace nasb {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense row-major tensor of doubles. Plain value semantics; gradients and
// graph tracking live in autograd::Var, not here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool defined() const { return !shape_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-d accessor (N,C,H,W); bounds are the caller's responsibility.
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double& at(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double at(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // In-place helpers used by backward accumulation and the optimizers.
  void add_(const Tensor& other);              // this += other
  void add_scaled_(const Tensor& other, double a);  // this += a * other
  void scale_(double a);

  double sum() const;
  double abs_max() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace nasb
