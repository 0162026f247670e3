#pragma once

#include "manf/codec.hpp"
#include "manf/metrics.hpp"

namespace manf {

struct RdCost {
  double bits = 0;
  double bpp = 0;
  double mse255 = 0;  // mean squared error on the 8-bit scale
  double cost = 0;    // bpp + lambda2 * mse255
};

/// Lagrangian cost of coding `image` (true extents, unpadded) under `mask`,
/// with the estimated rate of the rounded latents and the decoded reconstruction.
inline RdCost rd_cost(const Model& m, const Tensor<float>& image, const MaskPyramid& mask, double lambda2) {
  const Shape s = image.shape();
  const Tensor<float> x = replicate_pad(image);
  const auto masks = LevelMasks<float>::from(mask);
  EncodeOptions<float> opt;
  opt.mode = QuantMode::kRound;
  const auto enc = m.anf_encode(nullptr, Var<float>::constant(x), masks, opt);
  const Tensor<float> xhat = detail::finish_image(
      m.anf_decode(nullptr, Model::latent_vars(enc.latents), masks).value(), s.h(), s.w());
  RdCost c;
  c.bits = enc.rate_bits.value()[0];
  c.bpp = c.bits / double(s.h() * s.w());
  double acc = 0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double d = 255.0 * (double(xhat[i]) - double(image[i]));
    acc += d * d;
  }
  c.mse255 = acc / double(image.size());
  c.cost = c.bpp + lambda2 * c.mse255;
  return c;
}

struct RdoResult {
  MaskPyramid mask;
  RdCost cost;
  std::size_t evaluations = 0;
};

/// Greedy block-flip search. Starts from the cheapest of {initial, all level 1,
/// all level 2} (initial wins ties), then flips blocks in raster order,
/// keeping a flip to the coarse level when the cost does not increase and a
/// flip to the fine level only when it strictly decreases, until a full pass
/// changes nothing.
inline RdoResult rdo_mask_search(const Model& m, const Tensor<float>& image, double lambda2,
                                 const MaskPyramid& initial) {
  const Shape s = image.shape();
  const auto [rows, cols] = MaskPyramid::grid_for(padded_extent(std::uint32_t(s.h())), padded_extent(std::uint32_t(s.w())));
  if (initial.rows() != rows || initial.cols() != cols || !initial.is_partition())
    throw std::invalid_argument("rdo_mask_search: initial mask does not partition the image");
  RdoResult best{initial, rd_cost(m, image, initial, lambda2), 1};
  for (std::uint8_t level : {std::uint8_t(1), std::uint8_t(2)}) {
    MaskPyramid u = MaskPyramid::uniform(rows, cols, level);
    if (u == best.mask) continue;
    RdCost c = rd_cost(m, image, u, lambda2);
    ++best.evaluations;
    if (c.cost < best.cost.cost) {
      best.mask = u;
      best.cost = c;
    }
  }
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < cols; ++q) {
        MaskPyramid cand = best.mask;
        const std::uint8_t to = cand.block(r, q) == 1 ? 2 : 1;
        cand.set_block(r, q, to);
        RdCost c = rd_cost(m, image, cand, lambda2);
        ++best.evaluations;
        if (to == 2 ? c.cost <= best.cost.cost : c.cost < best.cost.cost) {
          best.mask = std::move(cand);
          best.cost = c;
          changed = true;
        }
      }
  }
  return best;
}

}  // namespace manf
