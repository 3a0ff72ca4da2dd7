#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spot/tensor.hpp"

namespace spot {

class OptimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update on a single parameter buffer. `t` is the
/// 1-based step count after incrementing.
template <typename S>
void adam_step(ArrayX<S>& param, const ArrayX<S>& grad, ArrayX<S>& m, ArrayX<S>& v,
               std::int64_t t, S lr, S beta1, S beta2, S eps, const std::string& name) {
  if (param.size() != grad.size() || m.size() != param.size() || v.size() != param.size())
    throw OptimError("adam_step: buffer size mismatch for parameter '" + name + "'");
  if (!(lr > S(0))) throw OptimError("adam_step: learning rate must be positive");
  if (!grad.isFinite().all())
    throw OptimError("adam_step: non-finite gradient for parameter '" + name + "'");
  m = beta1 * m + (S(1) - beta1) * grad;
  v = beta2 * v + (S(1) - beta2) * grad.square();
  const S corr1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), t));
  const S corr2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), t));
  param -= lr * (m / corr1) / ((v / corr2).sqrt() + eps);
}

template <typename S>
struct ParamRef {
  std::string name;
  Tensor<S> tensor;
};

/// Adam over a fixed set of named parameters. Reads gradients accumulated on
/// the parameter nodes, applies the update in place and clears the
/// gradients, so each optimizer step consumes exactly one backward pass.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ParamRef<S>> params, S beta1 = S(0.5), S beta2 = S(0.999), S eps = S(1e-8))
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
      m_.push_back(ArrayX<S>::Zero(p.tensor.size()));
      v_.push_back(ArrayX<S>::Zero(p.tensor.size()));
    }
  }

  void step(S lr) {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ParamRef<S>& p = params_[i];
      ArrayX<S> g = p.tensor.grad();
      adam_step(p.tensor.raw_values(), g, m_[i], v_[i], t_, lr, beta1_, beta2_, eps_, p.name);
      p.tensor.zero_grad();
    }
  }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const std::vector<ParamRef<S>>& params() const { return params_; }
  ArrayX<S>& moment1(std::size_t i) { return m_[i]; }
  ArrayX<S>& moment2(std::size_t i) { return v_[i]; }

 private:
  std::vector<ParamRef<S>> params_;
  std::vector<ArrayX<S>> m_, v_;
  std::int64_t t_ = 0;
  S beta1_ = S(0.5), beta2_ = S(0.999), eps_ = S(1e-8);
};

using AdamF = Adam<float>;

}  // namespace spot
