#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nasb/rng.hpp"

namespace nasb::nasgate {

// Architecture parameters of one edge: M reals, one per candidate operation.
struct EdgeArch {
  std::vector<double> alpha;

  std::int64_t num_ops() const { return static_cast<std::int64_t>(alpha.size()); }
};

// One stochastic gate draw: a one-hot vector and the distribution it came from.
struct GateSample {
  std::vector<double> g;  // one-hot
  std::vector<double> p;  // path weights used for the draw
  std::int64_t active = 0;
};

// Softmax with max subtraction; sums to 1 within 1e-12.
std::vector<double> path_weights(std::span<const double> alpha);

// Draws one categorical index from p and one-hot encodes it, so exactly one
// operation per edge is active. p must be a probability vector within 1e-6.
GateSample sample_gates(std::span<const double> p, Rng& rng);

// Gradient estimator w.r.t. the architecture parameters:
//   grad_alpha_i = sum_j grad_g_j * p_j * (delta_ij - p_i).
std::vector<double> gate_grad_to_alpha(std::span<const double> grad_g,
                                       std::span<const double> p);

}  // namespace nasb::nasgate
