#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bpct/autodiff.hpp"
#include "bpct/error.hpp"

namespace bpct::train {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moments for one parameter tensor.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

// One AdamW update with bias correction; `step` counts from 1. Weight decay is
// decoupled: p -= lr * wd * p before the adaptive step.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, std::uint64_t step,
                      double lr, double weight_decay, const AdamHyper& h = {}) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: grads do not match params");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match params");
  }
  if (step == 0) throw ValidationError("adam_step: step counts from 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * weight_decay * params[i];
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

// p <- p - lr * (g + wd * p)
inline void sgd_step(std::span<double> params, std::span<const double> grads, double lr, double weight_decay) {
  if (grads.size() != params.size()) throw ShapeError("sgd_step: grads do not match params");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * (grads[i] + weight_decay * params[i]);
}

// Leaves without a gradient slot are treated as having zero gradient.
inline std::span<const double> grad_or_zero(const ad::Tensor& t, std::vector<double>& scratch) {
  if (t.has_grad()) return t.grad();
  scratch.assign(t.numel(), 0.0);
  return scratch;
}

class Adam {
 public:
  explicit Adam(std::vector<ad::Tensor> params, AdamHyper hyper = {}) : params_(std::move(params)), hyper_(hyper) {
    state_.resize(params_.size());
  }

  void step(double lr, double weight_decay) {
    ++t_;
    std::vector<double> scratch;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      adam_step(params_[i].mutable_data(), grad_or_zero(params_[i], scratch), state_[i], t_, lr, weight_decay, hyper_);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  std::vector<ad::Tensor> params_;
  std::vector<AdamMoments> state_;
  AdamHyper hyper_;
  std::uint64_t t_ = 0;
};

class Sgd {
 public:
  explicit Sgd(std::vector<ad::Tensor> params) : params_(std::move(params)) {}

  void step(double lr, double weight_decay) {
    std::vector<double> scratch;
    for (auto& p : params_) sgd_step(p.mutable_data(), grad_or_zero(p, scratch), lr, weight_decay);
  }

 private:
  std::vector<ad::Tensor> params_;
};

inline double sum_squares(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double grad_norm(std::span<const ad::Tensor> params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (p.has_grad()) s += sum_squares(p.grad());
  }
  return std::sqrt(s);
}

}  // namespace bpct::train
