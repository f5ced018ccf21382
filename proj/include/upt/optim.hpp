#pragma once

#include <cmath>
#include <vector>

#include "upt/nn.hpp"
#include "upt/tensor.hpp"

namespace upt {

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8, double weight_decay = 1e-4)
      : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& [_, t] : store.entries()) {
      state_.push_back({std::vector<double>(t.numel(), 0.0), std::vector<double>(t.numel(), 0.0)});
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& entries = store_.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      auto& values = entries[p].second.values();
      const auto& grad = entries[p].second.grad();
      auto& [m, v] = state_[p];
      for (std::size_t i = 0; i < values.size(); ++i) {
        double g = grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        values[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * values[i]);
      }
    }
  }

  void zero_grad() { store_.zero_grad(); }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  ParamStore& store_;
  double lr_, beta1_, beta2_, eps_, wd_;
  std::vector<Moments> state_;
  std::size_t t_ = 0;
};

// Global gradient-norm clipping; returns the pre-clip norm. max_norm <= 0 disables.
inline double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, t] : store.entries())
    for (double g : t.grad()) sq += g * g;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (auto& [_, t] : store.entries())
      for (double& g : t.grad()) g *= scale;
  }
  return norm;
}

}  // namespace upt
