#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nasb/autograd.hpp"

namespace nasb::optim {

// Momentum SGD: v = mu*v + (g + wd*p); p -= lr*v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double weight_decay = 0.0);

  void step(std::vector<autograd::Var>& params);
  void zero_grad(std::vector<autograd::Var>& params);

  // State round-trips through checkpoints. Tensors are keyed by slot index.
  std::vector<std::pair<std::string, Tensor>> state_tensors(const std::string& prefix) const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                  const std::string& prefix);

  double lr() const { return lr_; }
  void set_lr(double lr);

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<Tensor> velocity_;
};

// Adam with bias correction; weight decay enters as an L2 gradient term.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0);

  void step(std::vector<autograd::Var>& params);
  void zero_grad(std::vector<autograd::Var>& params);

  std::int64_t t() const { return t_; }

  std::vector<std::pair<std::string, Tensor>> state_tensors(const std::string& prefix) const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                  const std::string& prefix);

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace nasb::optim
