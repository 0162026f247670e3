#pragma once

#include <cmath>
#include <stdexcept>

#include "manf/layers.hpp"

namespace manf {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of a single parameter.
template <std::floating_point T>
void adam_step(Parameter<T>& p, const AdamConfig& cfg) {
  if (!(cfg.lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  p.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(p.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(p.step));
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    const double m = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
    p.m[i] = static_cast<T>(m);
    p.v[i] = static_cast<T>(v);
    const double mhat = m / c1;
    const double vhat = v / c2;
    p.value[i] = static_cast<T>(p.value[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

/// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the norm before clipping.
template <std::floating_point T>
double clip_grad_norm(ParamStore<T>& store, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double sq = 0;
  for (const auto& p : store.all())
    for (std::size_t i = 0; i < p.grad.size(); ++i) sq += double(p.grad[i]) * double(p.grad[i]);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : store.all())
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] *= s;
  }
  return norm;
}

template <std::floating_point T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  if (!(cfg.lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  for (auto& p : store.all()) adam_step(p, cfg);
}

}  // namespace manf
