#pragma once

#include <random>
#include <vector>

#include "manf/gmm.hpp"
#include "manf/layers.hpp"

namespace manf {

enum class QuantMode {
  kNone,             // identity (analysis of the flow, no quantization)
  kNoise,            // additive uniform noise in (-0.5, 0.5), the training proxy
  kRound,            // round to nearest, ties away from zero
  kStraightThrough,  // rounding forward, identity gradient
};

/// Quantizer shared by latents and hyper-latents.
template <std::floating_point T>
Var<T> quantize(const Var<T>& y, QuantMode mode, Rng* rng = nullptr) {
  switch (mode) {
    case QuantMode::kNone:
      return y;
    case QuantMode::kRound:
    case QuantMode::kStraightThrough:
      return round_ste(y);
    case QuantMode::kNoise: {
      if (rng == nullptr) throw std::invalid_argument("quantize: noise mode needs a random generator");
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      const T edge = std::nextafter(T(0.5), T(0));
      Tensor<T> noise(y.shape());
      for (auto& v : noise.data()) v = std::clamp(static_cast<T>(u(*rng)), -edge, edge);
      return add_const(y, noise);
    }
  }
  return y;
}

/// Conditional hyperprior, causal context model and mixture head of one
/// Type B latent space unit, plus the factorized prior of its hyper-latent.
///
/// The conditioning signal v (cond_channels wide, zero for the deepest level)
/// is concatenated to the input of the first hyper-analysis layer and the
/// last hyper-synthesis layer.
template <std::floating_point T>
struct EntropyModel {
  static constexpr std::size_t kContextKernel = 5;

  std::size_t channels = 0;
  std::size_t cond_channels = 0;
  T slope = T(kDefaultLeakySlope);

  Conv2d<T> ha1, ha2, ha3;
  ConvTranspose2d<T> hs1, hs2;
  Conv2d<T> hs3;
  Conv2d<T> context;
  Tensor<T> context_mask;
  Conv2d<T> head1, head2;
  Parameter<T>* prior_mean = nullptr;
  Parameter<T>* prior_scale = nullptr;

  static EntropyModel create(ParamStore<T>& s, const std::string& p, std::size_t n, std::size_t cond, T slope,
                             Rng& rng) {
    EntropyModel m;
    m.channels = n;
    m.cond_channels = cond;
    m.slope = slope;
    m.ha1 = Conv2d<T>::create(s, p + ".hyper_analysis.0", n + cond, n, 3, 1, rng);
    m.ha2 = Conv2d<T>::create(s, p + ".hyper_analysis.1", n, n, 3, 2, rng);
    m.ha3 = Conv2d<T>::create(s, p + ".hyper_analysis.2", n, n, 3, 2, rng);
    m.hs1 = ConvTranspose2d<T>::create(s, p + ".hyper_synthesis.0", n, n, 3, 2, rng);
    m.hs2 = ConvTranspose2d<T>::create(s, p + ".hyper_synthesis.1", n, n, 3, 2, rng);
    m.hs3 = Conv2d<T>::create(s, p + ".hyper_synthesis.2", n + cond, 2 * n, 3, 1, rng);
    m.context = Conv2d<T>::create(s, p + ".context", n, 2 * n, kContextKernel, 1, rng);
    m.context_mask = causal_mask(2 * n, n);
    m.head1 = Conv2d<T>::create(s, p + ".gmm_head.0", 4 * n, 2 * n, 1, 1, rng);
    m.head2 = Conv2d<T>::create(s, p + ".gmm_head.1", 2 * n, 3 * kMixtures * n, 1, 1, rng);
    m.prior_mean = &s.add(p + ".prior.mean", Tensor<T>(Shape{n, 1, 1, 1}));
    m.prior_scale = &s.add(p + ".prior.scale", Tensor<T>(Shape{n, 1, 1, 1}, T(1)));
    return m;
  }

  /// Weight mask keeping kernel taps strictly before the centre in raster order.
  static Tensor<T> causal_mask(std::size_t cout, std::size_t cin) {
    const std::size_t k = kContextKernel, c = k / 2;
    Tensor<T> m(Shape{cout, cin, k, k});
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) m.at(o, i, ky, kx) = (ky < c || (ky == c && kx < c)) ? T(1) : T(0);
    return m;
  }

  Var<T> with_cond(const Var<T>& x, const Var<T>& v) const {
    if (cond_channels == 0) return x;
    if (!v.defined()) throw std::invalid_argument("entropy model: conditioning signal required for this level");
    return concat_channels(x, v);
  }

  Var<T> hyper_analysis(Graph<T>* g, const Var<T>& y, const Var<T>& v) const {
    auto h = leaky_relu(ha1(g, with_cond(y, v)), slope);
    h = leaky_relu(ha2(g, h), slope);
    return ha3(g, h);
  }

  Var<T> hyper_synthesis(Graph<T>* g, const Var<T>& hhat, const Var<T>& v) const {
    auto h = leaky_relu(hs1(g, hhat), slope);
    h = leaky_relu(hs2(g, h), slope);
    return hs3(g, with_cond(h, v));
  }

  Var<T> context_features(Graph<T>* g, const Var<T>& yhat) const {
    auto w = mul_const(param_var(g, *context.weight), context_mask);
    return conv2d(yhat, w, param_var(g, *context.bias), 1, kContextKernel / 2);
  }

  /// Raw mixture parameters (3*K*N channels) from fused hyper and context features.
  Var<T> gmm_raw(Graph<T>* g, const Var<T>& hyper_features, const Var<T>& ctx) const {
    return head2(g, leaky_relu(head1(g, concat_channels(hyper_features, ctx)), slope));
  }

  Var<T> prior_raw(Graph<T>* g, Shape s) const {
    Shape one{s.n(), s.c(), s.h(), s.w()};
    auto logits = Var<T>::constant(Tensor<T>(one));
    auto mean = broadcast_channels(param_var(g, *prior_mean), one);
    auto scale = broadcast_channels(param_var(g, *prior_scale), one);
    return concat_channels(concat_channels(logits, mean), scale);
  }

  Var<T> hyper_rate(Graph<T>* g, const Var<T>& hhat) const {
    return gmm_rate_bits(hhat, prior_raw(g, hhat.shape()), Tensor<T>{}, 1);
  }

  GmmParams prior_params(std::size_t c) const {
    GmmParams p;
    p.k = 1;
    p.weight = {1.0, 0.0, 0.0};
    p.mean[0] = prior_mean->value[c];
    p.scale[0] = kScaleMin + softplus(prior_scale->value[c]);
    return p;
  }

  /// Raw head output at one latent position, computed from causal neighbours
  /// of `yhat` only. Encoder and decoder both code through this function, so
  /// their probability tables agree bit for bit.
  void raw_at(const Tensor<T>& yhat, const Tensor<T>& hyper_features, std::size_t y, std::size_t x,
              std::vector<double>& raw) const {
    const std::size_t n = channels, k = kContextKernel, c0 = k / 2;
    const std::size_t H = yhat.shape().h(), W = yhat.shape().w();
    std::vector<double> fused(4 * n);
    for (std::size_t i = 0; i < 2 * n; ++i) fused[i] = hyper_features.at(0, i, y, x);
    const auto& cw = context.weight->value;
    for (std::size_t o = 0; o < 2 * n; ++o) {
      double acc = context.bias->value[o];
      for (std::size_t ci = 0; ci < n; ++ci)
        for (std::size_t ky = 0; ky <= c0; ++ky) {
          const long iy = long(y) + long(ky) - long(c0);
          if (iy < 0 || iy >= long(H)) continue;
          const std::size_t kx_end = ky < c0 ? k : c0;
          for (std::size_t kx = 0; kx < kx_end; ++kx) {
            const long ix = long(x) + long(kx) - long(c0);
            if (ix < 0 || ix >= long(W)) continue;
            acc += double(cw.at(o, ci, ky, kx)) * double(yhat.at(0, ci, iy, ix));
          }
        }
      fused[2 * n + o] = acc;
    }
    std::vector<double> hidden(2 * n);
    const auto& w1 = head1.weight->value;
    for (std::size_t o = 0; o < 2 * n; ++o) {
      double acc = head1.bias->value[o];
      for (std::size_t i = 0; i < 4 * n; ++i) acc += double(w1[o * 4 * n + i]) * fused[i];
      hidden[o] = acc >= 0 ? acc : double(slope) * acc;
    }
    const std::size_t out = 3 * kMixtures * n;
    raw.assign(out, 0.0);
    const auto& w2 = head2.weight->value;
    for (std::size_t o = 0; o < out; ++o) {
      double acc = head2.bias->value[o];
      for (std::size_t i = 0; i < 2 * n; ++i) acc += double(w2[o * 2 * n + i]) * hidden[i];
      raw[o] = acc;
    }
  }
};

}  // namespace manf
