#pragma once

#include <optional>
#include <type_traits>
#include <span>
#include <vector>

#include "manf/entropy_model.hpp"
#include "manf/mask.hpp"

namespace manf {

/// Per-level binary masks as tensors, (B or 1, 1, h_n, w_n).
template <std::floating_point T>
struct LevelMasks {
  std::vector<Tensor<T>> levels;

  static LevelMasks from(const MaskPyramid& m) {
    LevelMasks out;
    for (std::size_t l = 1; l <= kLevels; ++l) out.levels.push_back(m.template level_mask<T>(l));
    return out;
  }

  /// Stacks one pyramid per batch element.
  static LevelMasks from(std::span<const MaskPyramid> batch) {
    if (batch.empty()) throw std::invalid_argument("LevelMasks: empty batch");
    LevelMasks out;
    for (std::size_t l = 1; l <= kLevels; ++l) {
      Tensor<T> first = batch[0].template level_mask<T>(l);
      Tensor<T> stacked(Shape{batch.size(), 1, first.shape().h(), first.shape().w()});
      for (std::size_t b = 0; b < batch.size(); ++b) {
        Tensor<T> m = batch[b].template level_mask<T>(l);
        require_shape(m.shape() == first.shape(), "LevelMasks: pyramids in a batch must share extents");
        std::copy(m.data().begin(), m.data().end(), stacked.plane(b, 0));
      }
      out.levels.push_back(std::move(stacked));
    }
    return out;
  }

  const Tensor<T>& level(std::size_t n) const { return levels.at(n - 1); }
};

/// Ordered latents, level 1 (finest) first.
template <std::floating_point T>
struct LatentHierarchy {
  struct Level {
    Var<T> latent;
    Var<T> unquantized;  // masked latent before quantization
    bool quantized = false;
    bool mask_applied = false;
  };
  std::vector<Level> levels;

  std::size_t size() const { return levels.size(); }
  const Var<T>& operator[](std::size_t i) const { return levels.at(i).latent; }

  static LatentHierarchy of(std::vector<Var<T>> vars, bool quantized, bool masked) {
    LatentHierarchy h;
    for (auto& v : vars) h.levels.push_back({v, v, quantized, masked});
    return h;
  }
};

/// Masks a latent with the binary grid of its level; the grid must match
/// the latent's spatial extents.
template <std::floating_point T>
Var<T> mask_latent(const Var<T>& latent, const Tensor<T>& mask) {
  require_shape(mask.shape().h() == latent.shape().h() && mask.shape().w() == latent.shape().w(),
                "mask resolution " + mask.shape().str() + " does not match latent " + latent.shape().str());
  return apply_mask(latent, mask);
}

/// Latent space unit. Type A units emit a masked latent and pass features
/// deeper; Type B units additionally own an entropy model.
template <std::floating_point T>
struct LsUnit {
  std::size_t level = 1;
  Conv2d<T> down;
  Gdn<T> down_gdn;
  Conv2d<T> latent_head;
  Conv2d<T> merge_head;
  Gdn<T> up_igdn;
  ConvTranspose2d<T> up;
  std::optional<EntropyModel<T>> entropy;

  static LsUnit create(ParamStore<T>& s, const std::string& p, std::size_t level, std::size_t L, std::size_t N,
                       bool deepest, bool type_b, T slope, Rng& rng) {
    LsUnit u;
    u.level = level;
    u.down = Conv2d<T>::create(s, p + ".down", L, L, 3, 2, rng);
    u.down_gdn = Gdn<T>::create(s, p + ".down_gdn", L, false);
    u.latent_head = Conv2d<T>::create(s, p + ".latent_head", L, N, 3, 1, rng);
    u.merge_head = Conv2d<T>::create(s, p + ".merge_head", deepest ? N : N + L, L, 3, 1, rng);
    u.up_igdn = Gdn<T>::create(s, p + ".up_igdn", L, true);
    u.up = ConvTranspose2d<T>::create(s, p + ".up", L, L, 3, 2, rng);
    if (type_b) u.entropy = EntropyModel<T>::create(s, p + ".entropy", N, deepest ? 0 : N, slope, rng);
    return u;
  }

  bool type_b() const { return entropy.has_value(); }

  Var<T> downsample(Graph<T>* g, const Var<T>& f) const { return down_gdn(g, down(g, f)); }

  Var<T> synthesize(Graph<T>* g, const Var<T>& latent, const Var<T>& deeper) const {
    auto in = deeper.defined() ? concat_channels(latent, deeper) : latent;
    return up(g, up_igdn(g, merge_head(g, in)));
  }
};

template <std::floating_point T>
struct ChainAnalysis {
  LatentHierarchy<T> latents;
  Var<T> deep_features;
};

/// Runs the unit chain on encoder features. Unit n computes its latent,
/// adds the matching level of `augment` when given (additive coupling),
/// masks it with level n, optionally quantizes (Type B only), and hands its
/// downsampled features to unit n + 1.
template <std::floating_point T>
ChainAnalysis<T> lsunit_chain_analyze(std::type_identity_t<Graph<T>>* g, std::span<const LsUnit<T>> units, const Var<T>& features,
                                      const LevelMasks<T>& masks, QuantMode mode, Rng* rng,
                                      const LatentHierarchy<T>* augment = nullptr) {
  if (masks.levels.size() < units.size()) throw std::invalid_argument("lsunit chain: missing mask level");
  if (augment && augment->size() != units.size()) throw std::invalid_argument("lsunit chain: augment depth mismatch");
  ChainAnalysis<T> out;
  Var<T> f = features;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const LsUnit<T>& u = units[i];
    f = u.downsample(g, f);
    Var<T> lat = u.latent_head(g, f);
    if (augment) lat = add((*augment)[i], lat);
    lat = mask_latent(lat, masks.level(i + 1));
    typename LatentHierarchy<T>::Level level{lat, lat, false, true};
    if (mode != QuantMode::kNone) {
      if (!u.type_b()) throw std::logic_error("lsunit chain: only Type B units quantize");
      level.latent = mask_latent(quantize(lat, mode, rng), masks.level(i + 1));
      level.quantized = true;
    }
    out.latents.levels.push_back(std::move(level));
  }
  out.deep_features = f;
  return out;
}

/// Reconstructs features from the latents, deepest unit first; each unit sees
/// its own masked latent concatenated with the upsampled deeper features.
template <std::floating_point T>
Var<T> lsunit_chain_synthesize(std::type_identity_t<Graph<T>>* g, std::span<const LsUnit<T>> units, const LatentHierarchy<T>& latents,
                               const LevelMasks<T>& masks) {
  if (latents.size() != units.size())
    throw std::invalid_argument("lsunit chain: expected " + std::to_string(units.size()) + " latent levels, got " +
                                std::to_string(latents.size()));
  Var<T> deeper;
  for (std::size_t i = units.size(); i-- > 0;) {
    Var<T> lat = mask_latent(latents[i], masks.level(i + 1));
    deeper = units[i].synthesize(g, lat, deeper);
  }
  return deeper;
}

/// Invertible two-scale split of a single-scale latent:
///   z12 = l_e(z1),  z11 = z1 - l_d(z12)
template <std::floating_point T>
struct SplitNetwork {
  Conv2d<T> enc0, enc1;
  Conv2d<T> dec0;
  ConvTranspose2d<T> dec1;
  T slope = T(kDefaultLeakySlope);

  static SplitNetwork create(ParamStore<T>& s, const std::string& p, std::size_t N, T slope, Rng& rng) {
    SplitNetwork n;
    n.enc0 = Conv2d<T>::create(s, p + ".l_e.0", N, N, 3, 2, rng);
    n.enc1 = Conv2d<T>::create(s, p + ".l_e.1", N, N, 3, 1, rng);
    n.dec0 = Conv2d<T>::create(s, p + ".l_d.0", N, N, 3, 1, rng);
    n.dec1 = ConvTranspose2d<T>::create(s, p + ".l_d.1", N, N, 3, 2, rng);
    n.slope = slope;
    return n;
  }

  Var<T> l_e(Graph<T>* g, const Var<T>& z) const { return enc1(g, leaky_relu(enc0(g, z), slope)); }
  Var<T> l_d(Graph<T>* g, const Var<T>& z) const { return dec1(g, leaky_relu(dec0(g, z), slope)); }
};

template <std::floating_point T>
std::pair<Var<T>, Var<T>> latent_split(std::type_identity_t<Graph<T>>* g, const Var<T>& z1, const SplitNetwork<T>& net) {
  require_shape(z1.shape().h() % 2 == 0 && z1.shape().w() % 2 == 0,
                "latent_split: latent extents must be even, got " + z1.shape().str());
  Var<T> z12 = net.l_e(g, z1);
  Var<T> z11 = sub(z1, net.l_d(g, z12));
  return {z11, z12};
}

template <std::floating_point T>
Var<T> latent_merge(std::type_identity_t<Graph<T>>* g, const Var<T>& z11, const Var<T>& z12, const SplitNetwork<T>& net) {
  require_shape(z12.shape().h() * 2 == z11.shape().h() && z12.shape().w() * 2 == z11.shape().w() &&
                    z12.shape().c() == z11.shape().c() && z12.shape().n() == z11.shape().n(),
                "latent_merge: shapes " + z11.shape().str() + " and " + z12.shape().str() + " are inconsistent");
  return add(z11, net.l_d(g, z12));
}

}  // namespace manf
