#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "manf/byte_io.hpp"
#include "manf/tensor.hpp"

namespace manf {

/// Side of one coarsest assignment block, in image pixels.
inline constexpr std::size_t kBlockSize = 64;
/// Image-to-latent downsampling of hierarchy level 1 and level 2.
inline constexpr std::size_t kLevelDownsampling[2] = {8, 16};
inline constexpr std::size_t kLevels = 2;

/// Per-block assignment of image area to hierarchy levels (1 = fine, 2 = coarse).
///
/// A regular pyramid is a partition: every block belongs to exactly one
/// level. The all-pass pyramid is the one exception; it enables every level
/// everywhere and exists only for analysing the flow without masking. It
/// cannot be serialized.
class MaskPyramid {
 public:
  MaskPyramid() = default;

  MaskPyramid(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> block_levels)
      : rows_(rows), cols_(cols), blocks_(std::move(block_levels)) {
    if (blocks_.size() != rows_ * cols_) throw std::invalid_argument("mask block grid size mismatch");
    for (auto v : blocks_)
      if (v != 1 && v != 2) throw std::invalid_argument("mask block level must be 1 or 2");
  }

  static MaskPyramid uniform(std::size_t rows, std::size_t cols, std::uint8_t level) {
    return MaskPyramid(rows, cols, std::vector<std::uint8_t>(rows * cols, level));
  }

  static MaskPyramid all_pass(std::size_t rows, std::size_t cols) {
    MaskPyramid m = uniform(rows, cols, 1);
    m.all_pass_ = true;
    return m;
  }

  /// Block grid covering an image of the given (padded) pixel extents.
  static std::pair<std::size_t, std::size_t> grid_for(std::size_t height, std::size_t width) {
    if (height % kBlockSize != 0 || width % kBlockSize != 0)
      throw std::invalid_argument("image extents " + std::to_string(height) + "x" + std::to_string(width) +
                                  " are not multiples of the block size " + std::to_string(kBlockSize));
    return {height / kBlockSize, width / kBlockSize};
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t block_count() const { return blocks_.size(); }
  bool is_all_pass() const { return all_pass_; }

  std::uint8_t block(std::size_t r, std::size_t c) const { return blocks_[r * cols_ + c]; }
  void set_block(std::size_t r, std::size_t c, std::uint8_t level) {
    if (level != 1 && level != 2) throw std::invalid_argument("mask block level must be 1 or 2");
    all_pass_ = false;
    blocks_[r * cols_ + c] = level;
  }
  const std::vector<std::uint8_t>& blocks() const { return blocks_; }

  std::size_t count(std::uint8_t level) const {
    return static_cast<std::size_t>(std::count(blocks_.begin(), blocks_.end(), level));
  }

  static constexpr std::size_t cells_per_block(std::size_t level) {
    return kBlockSize / kLevelDownsampling[level - 1];
  }

  bool claims(std::size_t level, std::size_t r, std::size_t c) const {
    return all_pass_ || blocks_[r * cols_ + c] == level;
  }

  /// Binary (1, 1, h, w) grid at the latent resolution of `level`.
  template <std::floating_point T>
  Tensor<T> level_mask(std::size_t level) const {
    if (level < 1 || level > kLevels) throw std::invalid_argument("mask level out of range");
    const std::size_t cpb = cells_per_block(level);
    Tensor<T> m(Shape{1, 1, rows_ * cpb, cols_ * cpb});
    for (std::size_t y = 0; y < rows_ * cpb; ++y)
      for (std::size_t x = 0; x < cols_ * cpb; ++x) m.at(0, 0, y, x) = claims(level, y / cpb, x / cpb) ? T(1) : T(0);
    return m;
  }

  /// Upsamples every level mask to level-1 resolution and checks that the
  /// sum is one everywhere.
  bool is_partition() const {
    if (all_pass_) return false;
    const auto fine = level_mask<double>(1);
    const auto coarse = level_mask<double>(2);
    const std::size_t up = kLevelDownsampling[1] / kLevelDownsampling[0];
    for (std::size_t y = 0; y < fine.shape().h(); ++y)
      for (std::size_t x = 0; x < fine.shape().w(); ++x)
        if (fine.at(0, 0, y, x) + coarse.at(0, 0, y / up, x / up) != 1.0) return false;
    return true;
  }

  friend bool operator==(const MaskPyramid& a, const MaskPyramid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.blocks_ == b.blocks_ && a.all_pass_ == b.all_pass_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> blocks_;
  bool all_pass_ = false;
};

/// I.i.d. per-block level assignment.
inline MaskPyramid random_mask(std::size_t rows, std::size_t cols, const std::vector<double>& level_probabilities,
                               std::uint64_t seed) {
  if (level_probabilities.size() != kLevels) throw std::invalid_argument("random_mask: need one probability per level");
  double total = 0;
  for (double p : level_probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("random_mask: probabilities must lie in [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("random_mask: probabilities must sum to 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> blocks(rows * cols);
  for (auto& b : blocks) b = u(rng) < level_probabilities[0] ? 1 : 2;
  return MaskPyramid(rows, cols, std::move(blocks));
}

/// Rec.601 luminance variance of each block (population variance) of a
/// (1, 3, H, W) image; edge blocks may be partial.
template <std::floating_point T>
std::vector<double> block_variances(const Tensor<T>& image, std::size_t block_size, std::size_t& rows,
                                    std::size_t& cols) {
  const Shape& s = image.shape();
  if (s.c() != 3) throw std::invalid_argument("block_variances: expected an RGB image");
  if (block_size == 0) throw std::invalid_argument("block_variances: block size must be positive");
  rows = (s.h() + block_size - 1) / block_size;
  cols = (s.w() + block_size - 1) / block_size;
  std::vector<double> out(rows * cols);
  for (std::size_t br = 0; br < rows; ++br)
    for (std::size_t bc = 0; bc < cols; ++bc) {
      const std::size_t y0 = br * block_size, y1 = std::min(s.h(), (br + 1) * block_size);
      const std::size_t x0 = bc * block_size, x1 = std::min(s.w(), (bc + 1) * block_size);
      auto lum = [&](std::size_t y, std::size_t x) {
        return 0.299 * image.at(0, 0, y, x) + 0.587 * image.at(0, 1, y, x) + 0.114 * image.at(0, 2, y, x);
      };
      double sum = 0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) sum += lum(y, x);
      const double n = double((y1 - y0) * (x1 - x0));
      const double mean = sum / n;
      double sq = 0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) sq += (lum(y, x) - mean) * (lum(y, x) - mean);
      out[br * cols + bc] = sq / n;
    }
  return out;
}

/// Blocks whose luminance variance reaches `threshold` go to the fine level.
template <std::floating_point T>
MaskPyramid variance_mask(const Tensor<T>& image, std::size_t block_size, double threshold) {
  std::size_t rows = 0, cols = 0;
  auto var = block_variances(image, block_size, rows, cols);
  std::vector<std::uint8_t> blocks(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) blocks[i] = var[i] >= threshold ? 1 : 2;
  return MaskPyramid(rows, cols, std::move(blocks));
}

/// Median block variance over a corpus: the threshold sending about half of
/// the blocks to the fine level.
template <std::floating_point T>
double calibrate_variance_threshold(const std::vector<Tensor<T>>& images, std::size_t block_size) {
  std::vector<double> all;
  for (const auto& im : images) {
    std::size_t r = 0, c = 0;
    auto v = block_variances(im, block_size, r, c);
    all.insert(all.end(), v.begin(), v.end());
  }
  if (all.empty()) throw std::invalid_argument("calibrate_variance_threshold: empty corpus");
  std::sort(all.begin(), all.end());
  return all[all.size() / 2];
}

/// One bit per block in raster order, MSB first, level 1 -> 1, zero padded.
inline Bytes mask_serialize(const MaskPyramid& m) {
  if (m.is_all_pass()) throw std::invalid_argument("mask_serialize: the all-pass pyramid is not transmittable");
  Bytes out((m.block_count() + 7) / 8, 0);
  for (std::size_t i = 0; i < m.block_count(); ++i)
    if (m.blocks()[i] == 1) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  return out;
}

inline MaskPyramid mask_deserialize(const Bytes& bytes, std::size_t rows, std::size_t cols) {
  const std::size_t n = rows * cols;
  const std::size_t need = (n + 7) / 8;
  if (bytes.size() < need) throw FormatError("mask section truncated");
  if (bytes.size() > need) throw FormatError("mask section longer than the block grid");
  std::vector<std::uint8_t> blocks(n);
  for (std::size_t i = 0; i < n; ++i) blocks[i] = (bytes[i / 8] & (0x80u >> (i % 8))) ? 1 : 2;
  for (std::size_t i = n; i < need * 8; ++i)
    if (bytes[i / 8] & (0x80u >> (i % 8))) throw FormatError("mask padding bits are not zero");
  return MaskPyramid(rows, cols, std::move(blocks));
}

/// Text form: one line per block row, one character per block ('1' fine, '2' coarse).
inline std::string mask_to_text(const MaskPyramid& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out += char('0' + m.block(r, c));
    out += '\n';
  }
  return out;
}

inline MaskPyramid mask_from_text(const std::string& text) {
  std::vector<std::uint8_t> blocks;
  std::size_t rows = 0, cols = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (rows == 0) cols = line.size();
    if (line.size() != cols) throw FormatError("mask file rows differ in length");
    for (char ch : line) {
      if (ch != '1' && ch != '2') throw FormatError(std::string("mask file has invalid level '") + ch + "'");
      blocks.push_back(static_cast<std::uint8_t>(ch - '0'));
    }
    ++rows;
  }
  if (rows == 0) throw FormatError("mask file is empty");
  return MaskPyramid(rows, cols, std::move(blocks));
}

}  // namespace manf
