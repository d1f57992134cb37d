#include "nasb/optim.hpp"

#include <cmath>

#include "nasb/error.hpp"

namespace nasb::optim {

namespace {

void check_lr(double lr) {
  if (lr <= 0.0) throw ValueError(msg("optimizer: lr must be positive, got ", lr));
}

// Fetches "<prefix>/<key>" from a flat (name, tensor) list.
const Tensor* find_tensor(const std::vector<std::pair<std::string, Tensor>>& ts,
                          const std::string& name) {
  for (const auto& [n, t] : ts)
    if (n == name) return &t;
  return nullptr;
}

}  // namespace

SgdMomentum::SgdMomentum(double lr, double momentum, double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  check_lr(lr);
}

void SgdMomentum::set_lr(double lr) {
  check_lr(lr);
  lr_ = lr;
}

void SgdMomentum::step(std::vector<autograd::Var>& params) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.push_back(Tensor::zeros(p.value().shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor g = params[i].grad();
    if (weight_decay_ != 0.0) g.add_scaled_(params[i].value(), weight_decay_);
    Tensor& v = velocity_[i];
    v.scale_(momentum_);
    v.add_(g);
    params[i].mutable_value().add_scaled_(v, -lr_);
  }
}

void SgdMomentum::zero_grad(std::vector<autograd::Var>& params) {
  for (auto& p : params) p.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> SgdMomentum::state_tensors(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < velocity_.size(); ++i)
    out.emplace_back(prefix + "/v/" + std::to_string(i), velocity_[i]);
  return out;
}

void SgdMomentum::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                             const std::string& prefix) {
  velocity_.clear();
  for (std::size_t i = 0;; ++i) {
    const Tensor* t = find_tensor(tensors, prefix + "/v/" + std::to_string(i));
    if (!t) break;
    velocity_.push_back(*t);
  }
}

Adam::Adam(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  check_lr(lr);
  if (eps < 0.0) throw ValueError(msg("adam: eps must be nonnegative, got ", eps));
}

void Adam::step(std::vector<autograd::Var>& params) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros(p.value().shape()));
      v_.push_back(Tensor::zeros(p.value().shape()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor g = params[i].grad();
    if (weight_decay_ != 0.0) g.add_scaled_(params[i].value(), weight_decay_);
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    Tensor& p = params[i].mutable_value();
    for (std::int64_t j = 0; j < g.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad(std::vector<autograd::Var>& params) {
  for (auto& p : params) p.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> Adam::state_tensors(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back(prefix + "/t", Tensor::scalar(static_cast<double>(t_)));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.emplace_back(prefix + "/m/" + std::to_string(i), m_[i]);
    out.emplace_back(prefix + "/v/" + std::to_string(i), v_[i]);
  }
  return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                      const std::string& prefix) {
  m_.clear();
  v_.clear();
  if (const Tensor* t = find_tensor(tensors, prefix + "/t"))
    t_ = static_cast<std::int64_t>((*t)[0]);
  for (std::size_t i = 0;; ++i) {
    const Tensor* m = find_tensor(tensors, prefix + "/m/" + std::to_string(i));
    const Tensor* v = find_tensor(tensors, prefix + "/v/" + std::to_string(i));
    if (!m || !v) break;
    m_.push_back(*m);
    v_.push_back(*v);
  }
}

}  // namespace nasb::optim
