#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>

#include "holobyte/errors.hpp"
#include "holobyte/nn/parameter.hpp"

namespace holobyte::nn {

struct AdamWConfig {
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

template <class Real>
struct Moments {
  Tensor<Real> m;
  Tensor<Real> v;
};

template <class Real>
struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::unordered_map<std::string, Moments<Real>> moments;  // keyed by parameter id
};

/// Global L2 norm over every gradient in the registry.
template <class Real>
double global_grad_norm(const ParameterRegistry<Real>& reg) {
  double sq = 0.0;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const auto& p = reg[i];
    require(p.has_grad(), ErrorKind::IncompleteGradient, "parameter '" + p.id + "' has no gradient");
    for (Real gv : p.grad.vec()) sq += static_cast<double>(gv) * static_cast<double>(gv);
  }
  return std::sqrt(sq);
}

/// Rescales all gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
template <class Real>
double clip_gradients(ParameterRegistry<Real>& reg, double max_norm) {
  const double norm = global_grad_norm(reg);
  if (max_norm > 0.0 && norm > max_norm) {
    const Real factor = static_cast<Real>(max_norm / norm);
    for (std::size_t i = 0; i < reg.size(); ++i)
      for (auto& gv : reg[i].grad.vec()) gv *= factor;
  }
  return norm;
}

/// One AdamW update: global-norm clipping, decoupled weight decay on
/// non-exempt parameters, bias-corrected moments. Returns the pre-clip norm.
template <class Real>
double adamw_step(ParameterRegistry<Real>& reg, OptimizerState<Real>& state) {
  const auto& cfg = state.config;
  const double norm = clip_gradients(reg, cfg.clip_norm);
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const Real b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2);
  const Real step_size = static_cast<Real>(cfg.lr / bc1);
  const Real inv_sqrt_bc2 = static_cast<Real>(1.0 / std::sqrt(bc2));
  const Real eps = static_cast<Real>(cfg.eps);
  const Real decay = static_cast<Real>(1.0 - cfg.lr * cfg.weight_decay);

  for (std::size_t i = 0; i < reg.size(); ++i) {
    auto& p = reg[i];
    auto& mom = state.moments[p.id];
    if (mom.m.empty()) {
      mom.m = Tensor<Real>(p.values.shape());
      mom.v = Tensor<Real>(p.values.shape());
    }
    require(mom.m.shape() == p.values.shape(), ErrorKind::Shape, "optimizer moments do not match '" + p.id + "'");
    auto& w = p.values.vec();
    const auto& gr = p.grad.vec();
    auto& m = mom.m.vec();
    auto& v = mom.v.vec();
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (!p.decay_exempt) w[k] *= decay;
      m[k] = b1 * m[k] + (Real{1} - b1) * gr[k];
      v[k] = b2 * v[k] + (Real{1} - b2) * gr[k] * gr[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
  return norm;
}

}  // namespace holobyte::nn
