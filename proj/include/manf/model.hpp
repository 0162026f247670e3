#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "manf/lsunit.hpp"

namespace manf {

enum class ModelKind : std::uint8_t { kMAnfic = 0, kMsAnfic = 1 };

inline std::string to_string(ModelKind k) { return k == ModelKind::kMAnfic ? "m-anfic" : "ms-anfic"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "m-anfic" || s == "M_ANFIC" || s == "0") return ModelKind::kMAnfic;
  if (s == "ms-anfic" || s == "MS_ANFIC" || s == "1") return ModelKind::kMsAnfic;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected m-anfic or ms-anfic)");
}

struct FlowConfig {
  std::size_t transform_channels = 192;  // L
  std::size_t latent_channels = 192;     // N
  ModelKind kind = ModelKind::kMsAnfic;
  double slope = kDefaultLeakySlope;
  std::uint64_t seed = 1;

  static constexpr std::size_t kNumLayers = 2;
  static constexpr std::size_t kStackDownsampling = 4;

  void validate() const {
    if (transform_channels == 0 || latent_channels == 0) throw std::invalid_argument("FlowConfig: L and N must be >= 1");
    if (!(slope > 0 && slope < 1)) throw std::invalid_argument("FlowConfig: leaky slope must lie in (0, 1)");
  }
};

/// Two stride-2 conv + GDN stages: 3 -> L channels, spatial / 4.
template <std::floating_point T>
struct AnalysisStack {
  Conv2d<T> c0, c1;
  Gdn<T> g0, g1;

  static AnalysisStack create(ParamStore<T>& s, const std::string& p, std::size_t L, Rng& rng) {
    AnalysisStack a;
    a.c0 = Conv2d<T>::create(s, p + ".0", 3, L, 3, 2, rng);
    a.g0 = Gdn<T>::create(s, p + ".gdn0", L, false);
    a.c1 = Conv2d<T>::create(s, p + ".1", L, L, 3, 2, rng);
    a.g1 = Gdn<T>::create(s, p + ".gdn1", L, false);
    return a;
  }

  Var<T> operator()(Graph<T>* g, const Var<T>& x) const { return g1(g, c1(g, g0(g, c0(g, x)))); }
};

/// Mirror of AnalysisStack: IGDN + stride-2 transposed conv, twice; L -> 3.
template <std::floating_point T>
struct SynthesisStack {
  Gdn<T> g0, g1;
  ConvTranspose2d<T> t0, t1;

  static SynthesisStack create(ParamStore<T>& s, const std::string& p, std::size_t L, Rng& rng) {
    SynthesisStack a;
    a.g0 = Gdn<T>::create(s, p + ".igdn0", L, true);
    a.t0 = ConvTranspose2d<T>::create(s, p + ".0", L, L, 3, 2, rng);
    a.g1 = Gdn<T>::create(s, p + ".igdn1", L, true);
    a.t1 = ConvTranspose2d<T>::create(s, p + ".1", L, 3, 3, 2, rng);
    return a;
  }

  Var<T> operator()(Graph<T>* g, const Var<T>& f) const { return t1(g, g1(g, t0(g, g0(g, f)))); }
};

/// Side information of one coded level.
template <std::floating_point T>
struct LevelSide {
  Var<T> hyper;           // quantized hyper-latent (zeroed when the level is empty)
  Var<T> hyper_features;  // hyper-synthesis output, 2N channels
  Var<T> condition;       // v, undefined for the deepest level
  Tensor<T> hyper_mask;   // (B,1,h,w): 1 where the batch element codes this level
  Var<T> latent_bits;
  Var<T> hyper_bits;
};

template <std::floating_point T>
struct EncodeOptions {
  QuantMode mode = QuantMode::kRound;
  bool estimate_rate = true;
  Rng* rng = nullptr;
};

template <std::floating_point T>
struct EncodeResult {
  LatentHierarchy<T> latents;  // layer-2 output, level 1 first
  std::vector<LevelSide<T>> side;
  Var<T> x1;
  Var<T> x2;
  Var<T> rate_bits;  // scalar, summed over the batch
};

/// M-ANFIC / MS-ANFIC flow with its entropy models.
template <std::floating_point T>
class CodecModel {
 public:
  explicit CodecModel(FlowConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t L = cfg_.transform_channels, N = cfg_.latent_channels;
    const T slope = static_cast<T>(cfg_.slope);
    a1_ = AnalysisStack<T>::create(store_, "layer1.analysis", L, rng);
    s1_ = SynthesisStack<T>::create(store_, "layer1.synthesis", L, rng);
    if (cfg_.kind == ModelKind::kMAnfic) {
      for (std::size_t n = 1; n <= kLevels; ++n)
        units1_.push_back(LsUnit<T>::create(store_, "layer1.lsunit" + std::to_string(n), n, L, N, n == kLevels,
                                            false, slope, rng));
    } else {
      to_latent_ = Conv2d<T>::create(store_, "layer1.to_latent", L, N, 3, 2, rng);
      from_latent_ = ConvTranspose2d<T>::create(store_, "layer1.from_latent", N, L, 3, 2, rng);
      split_ = SplitNetwork<T>::create(store_, "split", N, slope, rng);
    }
    a2_ = AnalysisStack<T>::create(store_, "layer2.analysis", L, rng);
    s2_ = SynthesisStack<T>::create(store_, "layer2.synthesis", L, rng);
    for (std::size_t n = 1; n <= kLevels; ++n)
      units2_.push_back(LsUnit<T>::create(store_, "layer2.lsunit" + std::to_string(n), n, L, N, n == kLevels, true,
                                          slope, rng));
  }

  CodecModel(const CodecModel&) = delete;
  CodecModel& operator=(const CodecModel&) = delete;

  const FlowConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }
  const LsUnit<T>& coded_unit(std::size_t level) const { return units2_.at(level - 1); }
  const SplitNetwork<T>& split_network() const { return split_; }

  /// Total downsampling from image to the deepest latent.
  static constexpr std::size_t kDeepestFactor = 16;

  /// First ANF layer. Returns x1 and the latent state handed to layer 2:
  /// the masked level latents (for MS-ANFIC, the masked split pair).
  std::pair<Var<T>, std::vector<Var<T>>> layer1_encode(Graph<T>* g, const Var<T>& x, const LevelMasks<T>& masks,
                                                       const std::vector<Var<T>>* z0 = nullptr) const {
    check_image(x);
    std::vector<Var<T>> z;
    if (cfg_.kind == ModelKind::kMAnfic) {
      std::optional<LatentHierarchy<T>> aug;
      if (z0) aug = LatentHierarchy<T>::of(*z0, false, true);
      auto a = lsunit_chain_analyze<T>(g, units1_, a1_(g, x), masks, QuantMode::kNone, nullptr,
                                       aug ? &*aug : nullptr);
      for (auto& l : a.latents.levels) z.push_back(l.latent);
    } else {
      Var<T> z1 = to_latent_(g, a1_(g, x));
      if (z0) z1 = add(z0->at(0), z1);
      auto [z11, z12] = latent_split(g, z1, split_);
      z = {mask_latent(z11, masks.level(1)), mask_latent(z12, masks.level(2))};
    }
    return {sub(x, layer1_synthesis(g, z, masks)), z};
  }

  /// Inverse of layer1_encode: x = x1 + synthesis(z).
  Var<T> layer1_decode(Graph<T>* g, const Var<T>& x1, const std::vector<Var<T>>& z, const LevelMasks<T>& masks) const {
    return add(x1, layer1_synthesis(g, z, masks));
  }

  /// Second ANF layer: y_n = mask_n(z_n + head_n(...)), optionally quantized,
  /// then x2 = x1 - synthesis(y).
  std::pair<Var<T>, LatentHierarchy<T>> layer2_encode(Graph<T>* g, const Var<T>& x1, const std::vector<Var<T>>& z,
                                                      const LevelMasks<T>& masks, QuantMode mode, Rng* rng) const {
    check_image(x1);
    auto aug = LatentHierarchy<T>::of(z, false, false);
    auto a = lsunit_chain_analyze<T>(g, units2_, a2_(g, x1), masks, mode, rng, &aug);
    auto x2 = sub(x1, s2_(g, lsunit_chain_synthesize<T>(g, units2_, a.latents, masks)));
    return {x2, std::move(a.latents)};
  }

  /// Inverse of layer2_encode given the residual: x1 = x2 + synthesis(y),
  /// z_n = y_n - mask_n(head_n(x1)).
  std::pair<Var<T>, std::vector<Var<T>>> layer2_decode(Graph<T>* g, const Var<T>& x2, const std::vector<Var<T>>& y,
                                                       const LevelMasks<T>& masks) const {
    auto yh = LatentHierarchy<T>::of(y, true, true);
    auto x1 = add(x2, s2_(g, lsunit_chain_synthesize<T>(g, units2_, yh, masks)));
    auto a = lsunit_chain_analyze<T>(g, units2_, a2_(g, x1), masks, QuantMode::kNone, nullptr);
    std::vector<Var<T>> z;
    for (std::size_t i = 0; i < y.size(); ++i) z.push_back(sub(mask_latent(y[i], masks.level(i + 1)), a.latents[i]));
    return {x1, z};
  }

  EncodeResult<T> anf_encode(Graph<T>* g, const Var<T>& x, const LevelMasks<T>& masks,
                             const EncodeOptions<T>& opt = {}) const {
    check_masks(x.shape(), masks);
    EncodeResult<T> r;
    auto [x1, z] = layer1_encode(g, x, masks);
    auto [x2, y] = layer2_encode(g, x1, z, masks, opt.mode, opt.rng);
    r.x1 = x1;
    r.x2 = x2;
    r.latents = std::move(y);
    if (opt.estimate_rate) {
      r.side = side_information(g, r.latents, masks, opt.mode, opt.rng);
      std::vector<std::pair<T, Var<T>>> terms;
      for (auto& s : r.side) {
        terms.emplace_back(T(1), s.latent_bits);
        terms.emplace_back(T(1), s.hyper_bits);
      }
      r.rate_bits = linear_combination(terms);
    }
    return r;
  }

  /// Reconstruction from coded latents; the residual defaults to zero.
  Var<T> anf_decode(Graph<T>* g, const std::vector<Var<T>>& y, const LevelMasks<T>& masks,
                    const Var<T>& x2 = {}) const {
    if (y.size() != kLevels) throw std::invalid_argument("anf_decode: expected two latent levels");
    const Shape s = y[0].shape();
    const Shape img{s.n(), 3, s.h() * 8, s.w() * 8};
    check_masks(img, masks);
    Var<T> residual = x2.defined() ? x2 : Var<T>::constant(Tensor<T>(img));
    require_shape(residual.shape() == img, "anf_decode: residual " + residual.shape().str() + " does not match " +
                                               img.str());
    auto [x1, z] = layer2_decode(g, residual, y, masks);
    return layer1_decode(g, x1, z, masks);
  }

  static std::vector<Var<T>> latent_vars(const LatentHierarchy<T>& h) {
    std::vector<Var<T>> v;
    for (const auto& l : h.levels) v.push_back(l.latent);
    return v;
  }

  /// Hyperprior, conditioning and rate terms of every coded level, deepest first
  /// in computation but returned level 1 first.
  std::vector<LevelSide<T>> side_information(Graph<T>* g, const LatentHierarchy<T>& y, const LevelMasks<T>& masks,
                                             QuantMode mode, Rng* rng) const {
    std::vector<LevelSide<T>> side(kLevels);
    for (std::size_t i = kLevels; i-- > 0;) {
      const EntropyModel<T>& em = *units2_[i].entropy;
      LevelSide<T>& s = side[i];
      if (i + 1 < kLevels) s.condition = upsample_nearest2x(y[i + 1]);
      const Tensor<T>& mask = masks.level(i + 1);
      Var<T> h = em.hyper_analysis(g, y.levels[i].unquantized, s.condition);
      s.hyper_mask = hyper_mask(mask, h.shape());
      s.hyper = apply_mask(quantize(h, mode, rng), s.hyper_mask);
      s.hyper_features = em.hyper_synthesis(g, s.hyper, s.condition);
      auto raw = em.gmm_raw(g, s.hyper_features, em.context_features(g, y[i]));
      s.latent_bits = gmm_rate_bits(y[i], raw, broadcast_mask(mask, y[i].shape()), kMixtures);
      s.hyper_bits = gmm_rate_bits(s.hyper, em.prior_raw(g, s.hyper.shape()), s.hyper_mask, 1);
    }
    return side;
  }

  /// Hyper-features of a level from an already quantized hyper-latent (decoder side).
  Var<T> hyper_features(std::size_t level, const Var<T>& hhat, const Var<T>& condition) const {
    return units2_.at(level - 1).entropy->hyper_synthesis(nullptr, hhat, condition);
  }

  static Tensor<T> hyper_mask(const Tensor<T>& level_mask, Shape hyper) {
    Tensor<T> m(Shape{hyper.n(), 1, hyper.h(), hyper.w()});
    const std::size_t plane = level_mask.shape().plane();
    for (std::size_t b = 0; b < hyper.n(); ++b) {
      const std::size_t src = level_mask.shape().n() == 1 ? 0 : b;
      const T* p = level_mask.plane(src, 0);
      const bool any = std::any_of(p, p + plane, [](T v) { return v != T(0); });
      std::fill(m.plane(b, 0), m.plane(b, 0) + hyper.plane(), any ? T(1) : T(0));
    }
    return m;
  }

 private:
  Var<T> layer1_synthesis(Graph<T>* g, const std::vector<Var<T>>& z, const LevelMasks<T>& masks) const {
    if (z.size() != kLevels) throw std::invalid_argument("layer 1: expected two latent levels");
    if (cfg_.kind == ModelKind::kMAnfic) {
      auto h = LatentHierarchy<T>::of(z, false, true);
      return s1_(g, lsunit_chain_synthesize<T>(g, units1_, h, masks));
    }
    Var<T> z1 = latent_merge(g, z[0], z[1], split_);
    return s1_(g, from_latent_(g, z1));
  }

  static Tensor<T> broadcast_mask(const Tensor<T>& m, Shape latent) {
    if (m.shape().n() == latent.n()) return m;
    Tensor<T> out(Shape{latent.n(), 1, latent.h(), latent.w()});
    for (std::size_t b = 0; b < latent.n(); ++b) std::copy(m.data().begin(), m.data().end(), out.plane(b, 0));
    return out;
  }

  static void check_image(const Var<T>& x) {
    const Shape s = x.shape();
    require_shape(s.c() == 3, "image branch must have 3 channels, got " + s.str());
    require_shape(s.h() % kBlockSize == 0 && s.w() % kBlockSize == 0 && s.h() > 0 && s.w() > 0,
                  "image extents must be positive multiples of " + std::to_string(kBlockSize) + ", got " + s.str());
  }

  static void check_masks(Shape img, const LevelMasks<T>& masks) {
    if (masks.levels.size() != kLevels) throw std::invalid_argument("mask pyramid must have two levels");
    for (std::size_t n = 1; n <= kLevels; ++n) {
      const Shape m = masks.level(n).shape();
      const std::size_t f = kLevelDownsampling[n - 1];
      if (m.h() * f != img.h() || m.w() * f != img.w() || (m.n() != 1 && m.n() != img.n()))
        throw std::invalid_argument("mask level " + std::to_string(n) + " " + m.str() + " does not fit image " +
                                    img.str());
    }
  }

  FlowConfig cfg_;
  ParamStore<T> store_;
  AnalysisStack<T> a1_, a2_;
  SynthesisStack<T> s1_, s2_;
  std::vector<LsUnit<T>> units1_, units2_;
  Conv2d<T> to_latent_;
  ConvTranspose2d<T> from_latent_;
  SplitNetwork<T> split_;
};

/// Replicate-pads an image to the next multiple of `multiple` in both extents.
template <std::floating_point T>
Tensor<T> replicate_pad(const Tensor<T>& x, std::size_t multiple = kBlockSize) {
  const Shape s = x.shape();
  const std::size_t H = (s.h() + multiple - 1) / multiple * multiple;
  const std::size_t W = (s.w() + multiple - 1) / multiple * multiple;
  Tensor<T> out(Shape{s.n(), s.c(), H, W});
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          out.at(n, c, y, xx) = x.at(n, c, std::min(y, s.h() - 1), std::min(xx, s.w() - 1));
  return out;
}

template <std::floating_point T>
Tensor<T> crop(const Tensor<T>& x, std::size_t height, std::size_t width, std::size_t top = 0, std::size_t left = 0) {
  const Shape s = x.shape();
  require_shape(top + height <= s.h() && left + width <= s.w(), "crop window exceeds " + s.str());
  Tensor<T> out(Shape{s.n(), s.c(), height, width});
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t y = 0; y < height; ++y)
        std::copy_n(&x.at(n, c, top + y, left), width, &out.at(n, c, y, 0));
  return out;
}

}  // namespace manf
