#include "nasb/nasgate.hpp"

#include <algorithm>
#include <cmath>

#include "nasb/error.hpp"

namespace nasb::nasgate {

std::vector<double> path_weights(std::span<const double> alpha) {
  if (alpha.empty()) throw ValueError("path_weights: need at least one parameter");
  for (double a : alpha)
    if (!std::isfinite(a)) throw ValueError("path_weights: non-finite alpha");
  const double mx = *std::max_element(alpha.begin(), alpha.end());
  std::vector<double> p(alpha.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    p[i] = std::exp(alpha[i] - mx);
    denom += p[i];
  }
  for (double& v : p) v /= denom;
  return p;
}

GateSample sample_gates(std::span<const double> p, Rng& rng) {
  if (p.empty()) throw ValueError("sample_gates: empty distribution");
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0) throw ValueError(msg("sample_gates: negative probability ", v));
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw ValueError(msg("sample_gates: probabilities sum to ", total,
                         ", not 1 within 1e-6"));

  const double u = rng.uniform() * total;
  double cum = 0.0;
  std::size_t pick = p.size() - 1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) {
      pick = i;
      break;
    }
  }
  GateSample s;
  s.p.assign(p.begin(), p.end());
  s.g.assign(p.size(), 0.0);
  s.g[pick] = 1.0;
  s.active = static_cast<std::int64_t>(pick);
  return s;
}

std::vector<double> gate_grad_to_alpha(std::span<const double> grad_g,
                                       std::span<const double> p) {
  if (grad_g.size() != p.size())
    throw ShapeError(msg("gate_grad_to_alpha: ", grad_g.size(), " gate grads for ",
                         p.size(), " path weights"));
  const std::size_t m = p.size();
  // dot = sum_j grad_g_j * p_j, shared across all i.
  double dot = 0.0;
  for (std::size_t j = 0; j < m; ++j) dot += grad_g[j] * p[j];
  std::vector<double> grad_alpha(m);
  for (std::size_t i = 0; i < m; ++i)
    grad_alpha[i] = grad_g[i] * p[i] - p[i] * dot;
  return grad_alpha;
}

}  // namespace nasb::nasgate
