#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "manf/autograd.hpp"
#include "manf/conv_kernels.hpp"

namespace manf {

inline constexpr double kDefaultLeakySlope = 0.01;

// ---------------------------------------------------------------- convolution

template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require_shape(stride >= 1, "conv2d: stride must be positive");
  require_shape(ws.h() == ws.w(), "conv2d: kernel must be square, got " + ws.str());
  require_shape(xs.c() == ws.c(),
                "conv2d: input has " + std::to_string(xs.c()) + " channels, weights expect " + std::to_string(ws.c()));
  require_shape(b.shape().size() == ws.n(), "conv2d: bias length must equal output channels");
  const std::size_t k = ws.h();
  require_shape(xs.h() + 2 * pad >= k && xs.w() + 2 * pad >= k,
                "conv2d: kernel larger than padded input " + xs.str());
  const std::size_t oh = (xs.h() + 2 * pad - k) / stride + 1;
  const std::size_t ow = (xs.w() + 2 * pad - k) / stride + 1;
  require_shape(oh > 0 && ow > 0 && xs.n() > 0, "conv2d: zero-sized output");

  kernels::ConvGeom g{k, stride, pad};
  Tensor<T> out(Shape{xs.n(), ws.n(), oh, ow});
  kernels::gather(x.value(), w.value(), b.value().data().data(), out, g);
  return detail::make_result<T>(std::move(out), {&x, &w, &b}, [x, w, b, g](const Tensor<T>& go) {
    if (x.requires_grad()) {
      Tensor<T> gx(x.shape());
      kernels::scatter(go, w.value(), static_cast<const T*>(nullptr), gx, g);
      detail::push_grad(x, gx);
    }
    if (w.requires_grad()) {
      Tensor<T> gw(w.shape());
      kernels::weight_grad(go, x.value(), gw, g);
      detail::push_grad(w, gw);
    }
    if (b.requires_grad()) {
      Tensor<T> gb(b.shape());
      kernels::bias_grad(go, gb);
      detail::push_grad(b, gb);
    }
  });
}

/// Weights are (c_in, c_out, k, k): the same tensor used by conv2d maps
/// c_out -> c_in here, and this op is the adjoint of that conv2d.
template <std::floating_point T>
Var<T> transposed_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad,
                         std::size_t output_padding = 0) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require_shape(stride >= 1, "transposed_conv2d: stride must be positive");
  require_shape(ws.h() == ws.w(), "transposed_conv2d: kernel must be square, got " + ws.str());
  require_shape(xs.c() == ws.n(), "transposed_conv2d: input has " + std::to_string(xs.c()) +
                                      " channels, weights expect " + std::to_string(ws.n()));
  require_shape(b.shape().size() == ws.c(), "transposed_conv2d: bias length must equal output channels");
  require_shape(output_padding < stride, "transposed_conv2d: output_padding must be below stride");
  const std::size_t k = ws.h();
  const long oh = (static_cast<long>(xs.h()) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(pad) +
                  static_cast<long>(k) + static_cast<long>(output_padding);
  const long ow = (static_cast<long>(xs.w()) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(pad) +
                  static_cast<long>(k) + static_cast<long>(output_padding);
  require_shape(xs.h() > 0 && xs.w() > 0 && oh > 0 && ow > 0, "transposed_conv2d: zero-sized output");

  kernels::ConvGeom g{k, stride, pad};
  Tensor<T> out(Shape{xs.n(), ws.c(), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  kernels::scatter(x.value(), w.value(), b.value().data().data(), out, g);
  return detail::make_result<T>(std::move(out), {&x, &w, &b}, [x, w, b, g](const Tensor<T>& go) {
    if (x.requires_grad()) {
      Tensor<T> gx(x.shape());
      kernels::gather(go, w.value(), static_cast<const T*>(nullptr), gx, g);
      detail::push_grad(x, gx);
    }
    if (w.requires_grad()) {
      Tensor<T> gw(w.shape());
      kernels::weight_grad(x.value(), go, gw, g);
      detail::push_grad(w, gw);
    }
    if (b.requires_grad()) {
      Tensor<T> gb(b.shape());
      kernels::bias_grad(go, gb);
      detail::push_grad(b, gb);
    }
  });
}

// ------------------------------------------------------------------------ GDN

/// Generalized divisive normalization with exponent 1/2.
/// beta is (C,1,1,1), gamma is (C,C,1,1); both are the effective (already
/// reparametrized) values. inverse=true gives IGDN.
template <std::floating_point T>
Var<T> gdn(const Var<T>& x, const Var<T>& beta, const Var<T>& gamma, bool inverse) {
  const Shape& xs = x.shape();
  const std::size_t C = xs.c(), P = xs.plane();
  require_shape(beta.shape().size() == C, "gdn: beta length must equal channel count");
  require_shape(gamma.shape().size() == C * C, "gdn: gamma must be (channels, channels)");
  for (T v : beta.value().data()) {
    if (!(v > T(0))) throw std::invalid_argument("gdn: beta must be positive");
  }
  const T* bv = beta.value().data().data();
  const T* gv = gamma.value().data().data();

  // denom holds d = sqrt(beta + gamma * x^2) per element.
  Tensor<T> denom(xs);
  Tensor<T> out(xs);
  parallel_for(xs.n() * C, [&](std::size_t job) {
    const std::size_t n = job / C, i = job % C;
    T* d = denom.plane(n, i);
    for (std::size_t p = 0; p < P; ++p) d[p] = bv[i];
    for (std::size_t j = 0; j < C; ++j) {
      const T gij = gv[i * C + j];
      if (gij == T(0)) continue;
      const T* xj = x.value().plane(n, j);
      for (std::size_t p = 0; p < P; ++p) d[p] += gij * xj[p] * xj[p];
    }
    const T* xi = x.value().plane(n, i);
    T* o = out.plane(n, i);
    for (std::size_t p = 0; p < P; ++p) {
      d[p] = std::sqrt(d[p]);
      o[p] = inverse ? xi[p] * d[p] : xi[p] / d[p];
    }
  });

  return detail::make_result<T>(
      std::move(out), {&x, &beta, &gamma}, [x, beta, gamma, denom = std::move(denom), inverse](const Tensor<T>& go) {
        const Shape& xs = x.shape();
        const std::size_t C = xs.c(), P = xs.plane();
        const T* gv = gamma.value().data().data();
        const T sign = inverse ? T(1) : T(-1);
        // t_i = g_i x_i / d_i^3 (forward) or g_i x_i / d_i (inverse)
        Tensor<T> t(xs);
        for (std::size_t n = 0; n < xs.n(); ++n) {
          for (std::size_t i = 0; i < C; ++i) {
            const T* gi = go.plane(n, i);
            const T* xi = x.value().plane(n, i);
            const T* d = denom.plane(n, i);
            T* ti = t.plane(n, i);
            for (std::size_t p = 0; p < P; ++p) {
              ti[p] = inverse ? gi[p] * xi[p] / d[p] : gi[p] * xi[p] / (d[p] * d[p] * d[p]);
            }
          }
        }
        if (x.requires_grad()) {
          Tensor<T> gx(xs);
          parallel_for(xs.n() * C, [&](std::size_t job) {
            const std::size_t n = job / C, k = job % C;
            T* out = gx.plane(n, k);
            const T* gk = go.plane(n, k);
            const T* d = denom.plane(n, k);
            const T* xk = x.value().plane(n, k);
            for (std::size_t p = 0; p < P; ++p) out[p] = inverse ? gk[p] * d[p] : gk[p] / d[p];
            std::vector<T> acc(P, T(0));
            for (std::size_t i = 0; i < C; ++i) {
              const T gik = gv[i * C + k];
              if (gik == T(0)) continue;
              const T* ti = t.plane(n, i);
              for (std::size_t p = 0; p < P; ++p) acc[p] += gik * ti[p];
            }
            for (std::size_t p = 0; p < P; ++p) out[p] += sign * xk[p] * acc[p];
          });
          detail::push_grad(x, gx);
        }
        if (beta.requires_grad()) {
          Tensor<T> gb(beta.shape());
          for (std::size_t i = 0; i < C; ++i) {
            T acc = 0;
            for (std::size_t n = 0; n < xs.n(); ++n) {
              const T* ti = t.plane(n, i);
              for (std::size_t p = 0; p < P; ++p) acc += ti[p];
            }
            gb[i] = sign * T(0.5) * acc;
          }
          detail::push_grad(beta, gb);
        }
        if (gamma.requires_grad()) {
          Tensor<T> gg(gamma.shape());
          parallel_for(C, [&](std::size_t i) {
            for (std::size_t j = 0; j < C; ++j) {
              T acc = 0;
              for (std::size_t n = 0; n < xs.n(); ++n) {
                const T* ti = t.plane(n, i);
                const T* xj = x.value().plane(n, j);
                for (std::size_t p = 0; p < P; ++p) acc += ti[p] * xj[p] * xj[p];
              }
              gg[i * C + j] = sign * T(0.5) * acc;
            }
          });
          detail::push_grad(gamma, gg);
        }
      });
}

// ----------------------------------------------------------------- elementwise

template <std::floating_point T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(kDefaultLeakySlope)) {
  Tensor<T> out(x.shape());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] >= T(0) ? in[i] : slope * in[i];
  return detail::make_result<T>(std::move(out), {&x}, [x, slope](const Tensor<T>& go) {
    Tensor<T> gx(x.shape());
    const auto in = x.value().data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = in[i] >= T(0) ? go[i] : slope * go[i];
    detail::push_grad(x, gx);
  });
}

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_shape(a.shape() == b.shape(), "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out = a.value();
  out += b.value();
  return detail::make_result<T>(std::move(out), {&a, &b}, [a, b](const Tensor<T>& go) {
    detail::push_grad(a, go);
    detail::push_grad(b, go);
  });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_shape(a.shape() == b.shape(), "sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_result<T>(std::move(out), {&a, &b}, [a, b](const Tensor<T>& go) {
    detail::push_grad(a, go);
    if (b.requires_grad()) {
      Tensor<T> neg(go.shape());
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -go[i];
      detail::push_grad(b, neg);
    }
  });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_shape(a.shape() == b.shape(), "mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_result<T>(std::move(out), {&a, &b}, [a, b](const Tensor<T>& go) {
    if (a.requires_grad()) {
      Tensor<T> g(go.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = go[i] * b.value()[i];
      detail::push_grad(a, g);
    }
    if (b.requires_grad()) {
      Tensor<T> g(go.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = go[i] * a.value()[i];
      detail::push_grad(b, g);
    }
  });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return detail::make_result<T>(std::move(out), {&a}, [a, s](const Tensor<T>& go) {
    Tensor<T> g(go.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = go[i] * s;
    detail::push_grad(a, g);
  });
}

template <std::floating_point T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + s;
  return detail::make_result<T>(std::move(out), {&a}, [a](const Tensor<T>& go) { detail::push_grad(a, go); });
}

template <std::floating_point T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * a.value()[i];
  return detail::make_result<T>(std::move(out), {&a}, [a](const Tensor<T>& go) {
    Tensor<T> g(go.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = T(2) * a.value()[i] * go[i];
    detail::push_grad(a, g);
  });
}

/// Elementwise product with a constant of identical shape.
template <std::floating_point T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& c) {
  require_shape(a.shape() == c.shape(), "mul_const: shape mismatch");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c[i];
  return detail::make_result<T>(std::move(out), {&a}, [a, c](const Tensor<T>& go) {
    Tensor<T> g(go.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = go[i] * c[i];
    detail::push_grad(a, g);
  });
}

/// a + c for a constant c; gradient passes to a unchanged.
template <std::floating_point T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c) {
  require_shape(a.shape() == c.shape(), "add_const: shape mismatch");
  Tensor<T> out = a.value();
  out += c;
  return detail::make_result<T>(std::move(out), {&a}, [a](const Tensor<T>& go) { detail::push_grad(a, go); });
}

/// Rounds to nearest, ties away from zero, with an identity gradient.
template <std::floating_point T>
Var<T> round_ste(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::round(a.value()[i]);
  return detail::make_result<T>(std::move(out), {&a}, [a](const Tensor<T>& go) { detail::push_grad(a, go); });
}

// ---------------------------------------------------------- structural / mask

template <std::floating_point T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_shape(as.n() == bs.n() && as.h() == bs.h() && as.w() == bs.w(),
                "concat_channels: batch/spatial mismatch " + as.str() + " vs " + bs.str());
  Tensor<T> out(Shape{as.n(), as.c() + bs.c(), as.h(), as.w()});
  const std::size_t P = as.plane();
  for (std::size_t n = 0; n < as.n(); ++n) {
    std::copy_n(a.value().plane(n, 0), as.c() * P, out.plane(n, 0));
    std::copy_n(b.value().plane(n, 0), bs.c() * P, out.plane(n, as.c()));
  }
  return detail::make_result<T>(std::move(out), {&a, &b}, [a, b](const Tensor<T>& go) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const std::size_t P = as.plane();
    if (a.requires_grad()) {
      Tensor<T> ga(as);
      for (std::size_t n = 0; n < as.n(); ++n) std::copy_n(go.plane(n, 0), as.c() * P, ga.plane(n, 0));
      detail::push_grad(a, ga);
    }
    if (b.requires_grad()) {
      Tensor<T> gb(bs);
      for (std::size_t n = 0; n < bs.n(); ++n) std::copy_n(go.plane(n, as.c()), bs.c() * P, gb.plane(n, 0));
      detail::push_grad(b, gb);
    }
  });
}

template <std::floating_point T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const Shape& xs = x.shape();
  require_shape(begin + count <= xs.c() && count > 0, "slice_channels: range out of bounds for " + xs.str());
  Tensor<T> out(Shape{xs.n(), count, xs.h(), xs.w()});
  for (std::size_t n = 0; n < xs.n(); ++n) std::copy_n(x.value().plane(n, begin), count * xs.plane(), out.plane(n, 0));
  return detail::make_result<T>(std::move(out), {&x}, [x, begin, count](const Tensor<T>& go) {
    const Shape& xs = x.shape();
    Tensor<T> g(xs);
    for (std::size_t n = 0; n < xs.n(); ++n) std::copy_n(go.plane(n, 0), count * xs.plane(), g.plane(n, begin));
    detail::push_grad(x, g);
  });
}

/// Multiplies by a binary (N or 1, 1, H, W) mask broadcast across channels.
template <std::floating_point T>
Var<T> apply_mask(const Var<T>& x, const Tensor<T>& mask) {
  const Shape& xs = x.shape();
  const Shape& ms = mask.shape();
  require_shape(ms.c() == 1 && ms.h() == xs.h() && ms.w() == xs.w() && (ms.n() == 1 || ms.n() == xs.n()),
                "apply_mask: mask " + ms.str() + " does not match latent " + xs.str());
  auto run = [](const Tensor<T>& src, const Tensor<T>& m) {
    const Shape& s = src.shape();
    Tensor<T> out(s);
    for (std::size_t n = 0; n < s.n(); ++n) {
      const T* mp = m.plane(m.shape().n() == 1 ? 0 : n, 0);
      for (std::size_t c = 0; c < s.c(); ++c) {
        const T* sp = src.plane(n, c);
        T* op = out.plane(n, c);
        for (std::size_t p = 0; p < s.plane(); ++p) op[p] = sp[p] * mp[p];
      }
    }
    return out;
  };
  return detail::make_result<T>(run(x.value(), mask), {&x},
                                [x, mask, run](const Tensor<T>& go) { detail::push_grad(x, run(go, mask)); });
}

template <std::floating_point T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  const Shape& xs = x.shape();
  Tensor<T> out(Shape{xs.n(), xs.c(), xs.h() * 2, xs.w() * 2});
  for (std::size_t n = 0; n < xs.n(); ++n)
    for (std::size_t c = 0; c < xs.c(); ++c) {
      const T* s = x.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t y = 0; y < xs.h() * 2; ++y)
        for (std::size_t xx = 0; xx < xs.w() * 2; ++xx) o[y * xs.w() * 2 + xx] = s[(y / 2) * xs.w() + xx / 2];
    }
  return out;
}

template <std::floating_point T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  return detail::make_result<T>(upsample_nearest2x(x.value()), {&x}, [x](const Tensor<T>& go) {
    const Shape& xs = x.shape();
    Tensor<T> g(xs);
    for (std::size_t n = 0; n < xs.n(); ++n)
      for (std::size_t c = 0; c < xs.c(); ++c) {
        const T* s = go.plane(n, c);
        T* o = g.plane(n, c);
        for (std::size_t y = 0; y < xs.h() * 2; ++y)
          for (std::size_t xx = 0; xx < xs.w() * 2; ++xx) o[(y / 2) * xs.w() + xx / 2] += s[y * xs.w() * 2 + xx];
      }
    detail::push_grad(x, g);
  });
}

/// Repeats a (C,1,1,1) or (1,C,1,1) per-channel vector over (N, C, H, W).
template <std::floating_point T>
Var<T> broadcast_channels(const Var<T>& v, Shape target) {
  require_shape(v.shape().size() == target.c(), "broadcast_channels: length must equal target channels");
  Tensor<T> out(target);
  for (std::size_t n = 0; n < target.n(); ++n)
    for (std::size_t c = 0; c < target.c(); ++c) {
      T* o = out.plane(n, c);
      std::fill(o, o + target.plane(), v.value()[c]);
    }
  return detail::make_result<T>(std::move(out), {&v}, [v, target](const Tensor<T>& go) {
    Tensor<T> g(v.shape());
    for (std::size_t c = 0; c < target.c(); ++c) {
      T acc = 0;
      for (std::size_t n = 0; n < target.n(); ++n) {
        const T* p = go.plane(n, c);
        for (std::size_t i = 0; i < target.plane(); ++i) acc += p[i];
      }
      g[c] = acc;
    }
    detail::push_grad(v, g);
  });
}

// ------------------------------------------------------------------ reduction

template <std::floating_point T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return detail::make_result<T>(Tensor<T>::scalar(acc), {&x}, [x](const Tensor<T>& go) {
    detail::push_grad(x, Tensor<T>(x.shape(), go[0]));
  });
}

/// Mean of squared elements.
template <std::floating_point T>
Var<T> mean_square(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v * v;
  const T inv = T(1) / static_cast<T>(x.value().size());
  return detail::make_result<T>(Tensor<T>::scalar(acc * inv), {&x}, [x, inv](const Tensor<T>& go) {
    Tensor<T> g(x.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = T(2) * x.value()[i] * inv * go[0];
    detail::push_grad(x, g);
  });
}

/// Weighted sum of scalars: sum_i c_i * s_i.
template <std::floating_point T>
Var<T> linear_combination(const std::vector<std::pair<T, Var<T>>>& terms) {
  Var<T> acc;
  for (const auto& [c, v] : terms) {
    Var<T> t = scale(v, c);
    acc = acc.defined() ? add(acc, t) : t;
  }
  return acc;
}

}  // namespace manf
