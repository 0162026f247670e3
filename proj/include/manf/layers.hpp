#pragma once

#include <cmath>
#include <deque>
#include <random>
#include <string>

#include "manf/ops.hpp"

namespace manf {

using Rng = std::mt19937_64;

/// Owns every parameter of a model under a stable address and a unique name.
template <std::floating_point T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    if (find(name) != nullptr) throw std::logic_error("duplicate parameter name: " + name);
    return params_.emplace_back(name, std::move(init));
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Parameter<T>> params_;
};

template <std::floating_point T>
Tensor<T> uniform_tensor(Shape s, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <std::floating_point T>
struct Conv2d {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout,
                       std::size_t k, std::size_t stride, Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(cin * k * k));
    Conv2d c;
    c.weight = &store.add(name + ".weight", uniform_tensor<T>(Shape{cout, cin, k, k}, bound, rng));
    c.bias = &store.add(name + ".bias", uniform_tensor<T>(Shape{cout, 1, 1, 1}, bound, rng));
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }

  std::size_t in_channels() const { return weight->value.shape().c(); }
  std::size_t out_channels() const { return weight->value.shape().n(); }

  Var<T> operator()(Graph<T>* g, const Var<T>& x) const {
    return conv2d(x, param_var(g, *weight), param_var(g, *bias), stride, pad);
  }
};

/// Stride-s transposed convolution producing exactly s times the input extent.
template <std::floating_point T>
struct ConvTranspose2d {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  std::size_t stride = 2;
  std::size_t pad = 1;
  std::size_t output_padding = 1;

  static ConvTranspose2d create(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout,
                                std::size_t k, std::size_t stride, Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(cin * k * k) / double(stride * stride));
    ConvTranspose2d c;
    c.weight = &store.add(name + ".weight", uniform_tensor<T>(Shape{cin, cout, k, k}, bound, rng));
    c.bias = &store.add(name + ".bias", uniform_tensor<T>(Shape{cout, 1, 1, 1}, bound, rng));
    c.stride = stride;
    c.pad = k / 2;
    c.output_padding = stride - 1;
    return c;
  }

  Var<T> operator()(Graph<T>* g, const Var<T>& x) const {
    return transposed_conv2d(x, param_var(g, *weight), param_var(g, *bias), stride, pad, output_padding);
  }
};

/// GDN/IGDN layer. Stores raw parameters; the effective values are
/// beta = raw^2 + beta_min and gamma = raw^2, so beta >= beta_min and gamma >= 0.
template <std::floating_point T>
struct Gdn {
  static constexpr double kBetaMin = 1e-6;

  Parameter<T>* beta_raw = nullptr;
  Parameter<T>* gamma_raw = nullptr;
  bool inverse = false;

  static Gdn create(ParamStore<T>& store, const std::string& name, std::size_t channels, bool inverse) {
    Tensor<T> b(Shape{channels, 1, 1, 1}, static_cast<T>(std::sqrt(1.0 - kBetaMin)));
    Tensor<T> gm(Shape{channels, channels, 1, 1}, T(0.01));
    for (std::size_t i = 0; i < channels; ++i) gm[i * channels + i] = static_cast<T>(std::sqrt(0.1));
    Gdn l;
    l.beta_raw = &store.add(name + ".beta", std::move(b));
    l.gamma_raw = &store.add(name + ".gamma", std::move(gm));
    l.inverse = inverse;
    return l;
  }

  Var<T> beta(Graph<T>* g) const { return add_scalar(square(param_var(g, *beta_raw)), static_cast<T>(kBetaMin)); }
  Var<T> gamma(Graph<T>* g) const { return square(param_var(g, *gamma_raw)); }

  Var<T> operator()(Graph<T>* g, const Var<T>& x) const { return gdn(x, beta(g), gamma(g), inverse); }
};

}  // namespace manf
