#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "nasb/tensor.hpp"

namespace nasb::autograd {

// Geometry of a 2-d convolution / pooling window.
struct ConvSpec {
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;

  std::int64_t out_extent(std::int64_t in, std::int64_t kernel) const {
    const std::int64_t num = in + 2 * padding - dilation * (kernel - 1) - 1;
    // floor division; num can go negative for undersized inputs
    const std::int64_t q = num >= 0 ? num / stride : -((-num + stride - 1) / stride);
    return q + 1;
  }
  std::int64_t out_h(std::int64_t in_h) const { return out_extent(in_h, kernel_h); }
  std::int64_t out_w(std::int64_t in_w) const { return out_extent(in_w, kernel_w); }
  void validate() const;
};

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
};

}  // namespace detail

// Handle to a node of the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor value, bool requires_grad);
  static Var param(Tensor value) { return leaf(std::move(value), true); }
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient accumulated by the last backward(); zeros if never reached.
  Tensor grad() const;
  void zero_grad();

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
  friend Var make_op(Tensor, std::vector<Var>, std::function<void(detail::Node&)>);
};

// Extension point: builds a graph node from a computed forward value, its
// parents, and a backward rule. The rule receives the new node (value, grad,
// parents) and must accumulate into parents[i]->grad via accumulate().
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(detail::Node&)> backward_fn);

// Runs reverse-mode accumulation from a scalar loss. Visits each reachable
// node exactly once in reverse topological order.
void backward(const Var& loss);

// ---- primitives ----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);

// Cross-correlation without bias. input [N,C_in,H,W], weight [C_out,C_in,h,w].
Var conv2d(const Var& input, const Var& weight, const ConvSpec& spec);

// input [N,F], weight [C,F] -> [N,C]; no bias anywhere in the engine.
Var linear(const Var& input, const Var& weight);

Var relu(const Var& x);
Var tanh_op(const Var& x);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  std::int64_t batches_seen = 0;
};

// Per-channel batch normalization over (N,H,W). Training mode normalizes
// with batch statistics and updates the running stats by EMA; eval mode uses
// the running stats.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               BatchNormState& state, bool training, double eps = 1e-5,
               double momentum = 0.1);

// 3x3 pooling windows, the only pooling in the operation set. Max padding
// behaves like -inf (padding never wins); avg divides by the count of valid
// cells in every window.
Var max_pool3x3(const Var& x, std::int64_t stride, std::int64_t padding);
Var avg_pool3x3(const Var& x, std::int64_t stride, std::int64_t padding);

// [N,C,H,W] -> [N,C], mean over the spatial extent.
Var global_avg_pool(const Var& x);

// Mean over the batch of -log softmax(logits)[label]. logits [N,K].
Var softmax_cross_entropy(const Var& logits, const std::vector<std::int64_t>& labels);

Var sum(const Var& x);
Var mean(const Var& x);

// Spatial stride-2 slice, used to adapt identity/zero edges across a
// reduction boundary.
Var subsample2(const Var& x);

// Appends zero channels so that the channel count becomes new_c.
Var pad_channels(const Var& x, std::int64_t new_c);

}  // namespace nasb::autograd
