#pragma once

#include <cmath>
#include <vector>

#include "styleshift/autodiff.hpp"
#include "styleshift/tensor.hpp"

namespace styleshift {

// Adam with bias-corrected moment estimates. State is indexed positionally,
// so the parameter list must stay stable for the optimizer's lifetime.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<ad::Var<T>> params, T lr, T beta1 = T(0.9),
                T beta2 = T(0.999), T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value().shape());
      v_.emplace_back(p.value().shape());
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const Tensor<T>& g = params_[i].grad();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      Tensor<T>& w = params_[i].value();
      for (long j = 0; j < g.numel(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        T mhat = static_cast<T>(m[j] / bc1);
        T vhat = static_cast<T>(v[j] / bc2);
        w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  const std::vector<ad::Var<T>>& params() const { return params_; }

 private:
  std::vector<ad::Var<T>> params_;
  T lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace styleshift
