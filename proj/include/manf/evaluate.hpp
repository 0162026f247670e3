#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "manf/codec.hpp"
#include "manf/image_io.hpp"
#include "manf/metrics.hpp"
#include "manf/rdo.hpp"

namespace manf {

enum class MaskMode { kVariance, kRdo, kAllFine, kFile };

/// Block partition of the padded image for the chosen mode. `file` is the
/// text mask for kFile.
inline MaskPyramid choose_mask(const Model& m, const Tensor<float>& image, MaskMode mode, double lambda2,
                               double variance_threshold, const std::string& file_text = {}) {
  const Tensor<float> padded = replicate_pad(image);
  const auto [rows, cols] = MaskPyramid::grid_for(padded.shape().h(), padded.shape().w());
  switch (mode) {
    case MaskMode::kAllFine:
      return MaskPyramid::uniform(rows, cols, 1);
    case MaskMode::kFile: {
      MaskPyramid mk = mask_from_text(file_text);
      if (mk.rows() != rows || mk.cols() != cols)
        throw std::invalid_argument("mask file is " + std::to_string(mk.rows()) + "x" + std::to_string(mk.cols()) +
                                    " blocks, image needs " + std::to_string(rows) + "x" + std::to_string(cols));
      return mk;
    }
    case MaskMode::kVariance:
    case MaskMode::kRdo:
      break;
  }
  MaskPyramid var = variance_mask(padded, kBlockSize, variance_threshold);
  if (mode == MaskMode::kVariance) return var;
  return rdo_mask_search(m, image, lambda2, var).mask;
}

struct ImageResult {
  std::string model_id;
  double lambda2 = 0;
  std::string image;
  double bpp = 0;
  double psnr_rgb = 0;
  double ms_ssim = 0;
  double ms_ssim_db = 0;
};

struct EvalResult {
  RdCurve curve;
  std::vector<ImageResult> images;
};

/// Codes every image with every checkpoint; each curve point is the
/// arithmetic mean of the per-image values.
inline EvalResult evaluate(const std::vector<std::filesystem::path>& checkpoints,
                           const std::vector<std::pair<std::string, Tensor<float>>>& images, const std::string& label,
                           MaskMode mode = MaskMode::kVariance) {
  if (images.empty()) throw std::invalid_argument("evaluation needs at least one image");
  if (checkpoints.empty()) throw std::invalid_argument("evaluation needs at least one checkpoint");
  EvalResult out;
  out.curve.label = label;
  for (const auto& path : checkpoints) {
    const LoadedModel lm = load_model(path);
    const double lambda2 = lm.lambda2();
    RdPoint pt{path.stem().string(), lambda2, 0, 0, 0, 0};
    for (const auto& [name, img] : images) {
      const MaskPyramid mask = choose_mask(*lm.model, img, mode, lambda2, lm.variance_threshold());
      const CompressResult c =
          compress(*lm.model, img, mask, static_cast<std::uint8_t>(lambda_index_of(lambda2)), lm.hash);
      const auto rec = to_8bit_grid(c.reconstruction);
      const auto ref = to_8bit_grid(img);
      const MsSsim ms = ms_ssim(rec, ref);
      ImageResult r{pt.model_id, lambda2, name, c.bpp, psnr_rgb(rec, ref).db, ms.value, ms.db};
      pt.bpp += r.bpp;
      pt.psnr_rgb += r.psnr_rgb;
      pt.ms_ssim += r.ms_ssim;
      pt.ms_ssim_db += r.ms_ssim_db;
      out.images.push_back(std::move(r));
    }
    const double n = double(images.size());
    pt.bpp /= n;
    pt.psnr_rgb /= n;
    pt.ms_ssim /= n;
    pt.ms_ssim_db /= n;
    out.curve.points.push_back(pt);
  }
  sort_by_rate(out.curve);
  return out;
}

inline std::string image_csv(const std::string& label, const std::vector<ImageResult>& rows) {
  std::string s = "label,model_id,lambda2,image,bpp,psnr_rgb_db,ms_ssim,ms_ssim_db\n";
  for (const auto& r : rows)
    s += label + "," + r.model_id + "," + shortest(r.lambda2) + "," + r.image + "," + shortest(r.bpp) + "," +
         shortest(r.psnr_rgb) + "," + shortest(r.ms_ssim) + "," + shortest(r.ms_ssim_db) + "\n";
  return s;
}

}  // namespace manf
