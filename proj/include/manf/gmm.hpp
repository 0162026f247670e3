#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "manf/ops.hpp"

namespace manf {

inline constexpr std::size_t kMixtures = 3;
inline constexpr double kScaleMin = 1e-3;
inline constexpr double kProbMin = 1.0 / 32768.0;  // 2^-15

/// Mixture of up to three Gaussians for one symbol position and channel.
struct GmmParams {
  std::size_t k = kMixtures;
  std::array<double, kMixtures> weight{1.0, 0.0, 0.0};
  std::array<double, kMixtures> mean{};
  std::array<double, kMixtures> scale{1.0, 1.0, 1.0};
};

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

inline double normal_cdf(double u) { return 0.5 * std::erfc(-u * kInvSqrt2); }
inline double normal_pdf(double u) { return std::exp(-0.5 * u * u) * (std::numbers::inv_sqrtpi * kInvSqrt2); }

/// Phi(hi) - Phi(lo), evaluated on the tail nearer zero to avoid cancellation.
inline double normal_mass(double lo, double hi) {
  if (lo + hi > 0) return normal_cdf(-lo) - normal_cdf(-hi);
  return normal_cdf(hi) - normal_cdf(lo);
}

/// Probability that a sample from the mixture rounds to integer s.
inline double gmm_interval_prob(double s, const GmmParams& p) {
  double acc = 0;
  for (std::size_t j = 0; j < p.k; ++j) {
    acc += p.weight[j] * normal_mass((s - 0.5 - p.mean[j]) / p.scale[j], (s + 0.5 - p.mean[j]) / p.scale[j]);
  }
  return acc;
}

/// Mixture CDF at real point t.
inline double gmm_cdf(double t, const GmmParams& p) {
  double acc = 0;
  for (std::size_t j = 0; j < p.k; ++j) acc += p.weight[j] * normal_cdf((t - p.mean[j]) / p.scale[j]);
  return acc;
}

inline double softplus(double v) { return v > 30 ? v : std::log1p(std::exp(v)); }
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Decodes raw network outputs into a valid mixture. `raw(i)` returns the
/// value of raw channel i for this position; channel layout for k components
/// and C latent channels is [logits k*C | means k*C | scale_raw k*C], with
/// component j of channel c at offset j*C + c inside each block.
template <class RawAt>
GmmParams gmm_from_raw(RawAt&& raw, std::size_t k, std::size_t channels, std::size_t c) {
  GmmParams p;
  p.k = k;
  double mx = -1e300;
  for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, double(raw(j * channels + c)));
  double z = 0;
  for (std::size_t j = 0; j < k; ++j) {
    p.weight[j] = std::exp(double(raw(j * channels + c)) - mx);
    z += p.weight[j];
  }
  for (std::size_t j = 0; j < k; ++j) {
    p.weight[j] /= z;
    p.mean[j] = raw((k + j) * channels + c);
    p.scale[j] = kScaleMin + softplus(raw((2 * k + j) * channels + c));
  }
  return p;
}

/// Rate in bits of y under per-element mixtures given by raw head outputs:
/// sum over unmasked elements of -log2(max(p, p_min)). mask may be empty
/// (all elements count) or (N or 1, 1, H, W).
template <std::floating_point T>
Var<T> gmm_rate_bits(const Var<T>& y, const Var<T>& raw, const Tensor<T>& mask, std::size_t k) {
  const Shape& ys = y.shape();
  const Shape& rs = raw.shape();
  require_shape(k >= 1 && k <= kMixtures, "gmm_rate_bits: component count out of range");
  require_shape(rs.n() == ys.n() && rs.h() == ys.h() && rs.w() == ys.w() && rs.c() == 3 * k * ys.c(),
                "gmm_rate_bits: raw params " + rs.str() + " do not match latent " + ys.str());
  if (!mask.empty()) {
    const Shape& ms = mask.shape();
    require_shape(ms.c() == 1 && ms.h() == ys.h() && ms.w() == ys.w() && (ms.n() == 1 || ms.n() == ys.n()),
                  "gmm_rate_bits: mask shape mismatch");
  }
  const std::size_t C = ys.c(), P = ys.plane();
  auto masked_out = [&mask](std::size_t n, std::size_t p) {
    if (mask.empty()) return false;
    return mask.plane(mask.shape().n() == 1 ? 0 : n, 0)[p] == T(0);
  };

  double total = 0;
  for (std::size_t n = 0; n < ys.n(); ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        if (masked_out(n, p)) continue;
        GmmParams g = gmm_from_raw([&](std::size_t ch) { return raw.value().plane(n, ch)[p]; }, k, C, c);
        double prob = gmm_interval_prob(y.value().plane(n, c)[p], g);
        total += -std::log2(std::max(prob, kProbMin));
      }

  return detail::make_result<T>(
      Tensor<T>::scalar(static_cast<T>(total)), {&y, &raw}, [y, raw, mask, k](const Tensor<T>& go) {
        auto masked_out = [&mask](std::size_t n, std::size_t p) {
          if (mask.empty()) return false;
          return mask.plane(mask.shape().n() == 1 ? 0 : n, 0)[p] == T(0);
        };
        const Shape& ys = y.shape();
        const std::size_t C = ys.c(), P = ys.plane();
        Tensor<T> gy(ys);
        Tensor<T> gr(raw.shape());
        const double upstream = go[0];
        for (std::size_t n = 0; n < ys.n(); ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) {
              if (masked_out(n, p)) continue;
              auto rawv = [&](std::size_t ch) { return double(raw.value().plane(n, ch)[p]); };
              GmmParams g = gmm_from_raw(rawv, k, C, c);
              const double s = y.value().plane(n, c)[p];
              std::array<double, kMixtures> mass{}, dlo{}, dhi{};
              double prob = 0;
              for (std::size_t j = 0; j < k; ++j) {
                const double lo = (s - 0.5 - g.mean[j]) / g.scale[j];
                const double hi = (s + 0.5 - g.mean[j]) / g.scale[j];
                mass[j] = normal_mass(lo, hi);
                dlo[j] = lo;
                dhi[j] = hi;
                prob += g.weight[j] * mass[j];
              }
              if (prob <= kProbMin) continue;  // clamped region is flat
              const double coef = -upstream / (prob * std::numbers::ln2);
              double dy = 0;
              for (std::size_t j = 0; j < k; ++j) {
                const double plo = normal_pdf(dlo[j]), phi = normal_pdf(dhi[j]);
                const double dmass_dmu = -(phi - plo) / g.scale[j];
                const double dmass_dsigma = -(phi * dhi[j] - plo * dlo[j]) / g.scale[j];
                dy += g.weight[j] * (phi - plo) / g.scale[j];
                gr.plane(n, (k + j) * C + c)[p] = static_cast<T>(coef * g.weight[j] * dmass_dmu);
                gr.plane(n, (2 * k + j) * C + c)[p] =
                    static_cast<T>(coef * g.weight[j] * dmass_dsigma * sigmoid(rawv((2 * k + j) * C + c)));
                gr.plane(n, j * C + c)[p] = static_cast<T>(coef * g.weight[j] * (mass[j] - prob));
              }
              gy.plane(n, c)[p] = static_cast<T>(coef * dy);
            }
        detail::push_grad(y, gy);
        detail::push_grad(raw, gr);
      });
}

}  // namespace manf
