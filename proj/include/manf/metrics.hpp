#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "manf/tensor.hpp"

namespace manf {

inline constexpr double kQualityCapDb = 99.0;

struct Psnr {
  double db = 0;
  bool exact = false;
};

inline Psnr psnr_from_mse(double mse) {
  if (mse <= 0) return {kQualityCapDb, true};
  return {10.0 * std::log10(255.0 * 255.0 / mse), false};
}

/// Joint RGB PSNR of two images in [0, 1], measured on the 8-bit scale.
template <std::floating_point T>
Psnr psnr_rgb(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(), "psnr_rgb: extents differ (" + a.shape().str() + " vs " + b.shape().str() + ")");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = 255.0 * (double(a[i]) - double(b[i]));
    acc += d * d;
  }
  return psnr_from_mse(acc / double(a.size()));
}

/// Rounds to the 8-bit grid the image would be stored on.
template <std::floating_point T>
Tensor<T> to_8bit_grid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<T>(std::round(std::clamp(double(x[i]), 0.0, 1.0) * 255.0) / 255.0);
  return out;
}

inline double bpp(std::size_t payload_bytes, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw std::invalid_argument("bpp: zero image extent");
  return 8.0 * double(payload_bytes) / (double(width) * double(height));
}

namespace detail {

using Plane = std::vector<double>;

inline std::vector<double> gaussian_window() {
  std::vector<double> g(11);
  double s = 0;
  for (int i = 0; i < 11; ++i) s += g[i] = std::exp(-double((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
  for (auto& v : g) v /= s;
  return g;
}

/// Valid-mode separable 11x11 Gaussian filter.
inline Plane blur(const Plane& p, std::size_t h, std::size_t w) {
  static const std::vector<double> g = gaussian_window();
  const std::size_t ow = w - 10, oh = h - 10;
  Plane tmp(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double a = 0;
      for (std::size_t k = 0; k < 11; ++k) a += g[k] * p[y * w + x + k];
      tmp[y * ow + x] = a;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double a = 0;
      for (std::size_t k = 0; k < 11; ++k) a += g[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = a;
    }
  return out;
}

inline Plane pool2(const Plane& p, std::size_t h, std::size_t w) {
  Plane out((h / 2) * (w / 2));
  for (std::size_t y = 0; y < h / 2; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      out[y * (w / 2) + x] =
          0.25 * (p[2 * y * w + 2 * x] + p[2 * y * w + 2 * x + 1] + p[(2 * y + 1) * w + 2 * x] + p[(2 * y + 1) * w + 2 * x + 1]);
  return out;
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
inline std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, std::size_t h, std::size_t w) {
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  Plane aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const Plane ma = blur(a, h, w), mb = blur(b, h, w), saa = blur(aa, h, w), sbb = blur(bb, h, w), sab = blur(ab, h, w);
  double ssim = 0, cs = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
    const double csv = (2 * cov + c2) / (va + vb + c2);
    cs += csv;
    ssim += (2 * ma[i] * mb[i] + c1) / (ma[i] * ma[i] + mb[i] * mb[i] + c1) * csv;
  }
  return {ssim / double(ma.size()), cs / double(ma.size())};
}

}  // namespace detail

inline constexpr std::size_t kMsSsimMinExtent = 176;

struct MsSsim {
  double value = 0;
  double db = 0;
  bool exact = false;
};

inline double ms_ssim_to_db(double ms) {
  if (ms >= 1.0) return kQualityCapDb;
  return std::min(kQualityCapDb, -10.0 * std::log10(1.0 - ms));
}

/// Five-scale MS-SSIM on the 8-bit scale; channel scores are averaged per scale.
template <std::floating_point T>
MsSsim ms_ssim(const Tensor<T>& a, const Tensor<T>& b) {
  static constexpr double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  require_shape(a.shape() == b.shape(), "ms_ssim: extents differ");
  const Shape s = a.shape();
  if (s.h() < kMsSsimMinExtent || s.w() < kMsSsimMinExtent)
    throw std::invalid_argument("ms_ssim: images must be at least " + std::to_string(kMsSsimMinExtent) + "x" +
                                std::to_string(kMsSsimMinExtent) + " pixels, got " + std::to_string(s.h()) + "x" +
                                std::to_string(s.w()));
  std::vector<detail::Plane> pa, pb;
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c) {
      detail::Plane x(s.plane()), y(s.plane());
      for (std::size_t i = 0; i < s.plane(); ++i) {
        x[i] = 255.0 * double(a.plane(n, c)[i]);
        y[i] = 255.0 * double(b.plane(n, c)[i]);
      }
      pa.push_back(std::move(x));
      pb.push_back(std::move(y));
    }
  std::size_t h = s.h(), w = s.w();
  double result = 1;
  for (int scale = 0; scale < 5; ++scale) {
    double ssim = 0, cs = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      auto [sv, cv] = detail::ssim_terms(pa[i], pb[i], h, w);
      ssim += sv;
      cs += cv;
    }
    ssim /= double(pa.size());
    cs /= double(pa.size());
    const double term = std::max(scale == 4 ? ssim : cs, 0.0);
    result *= std::pow(term, kWeights[scale]);
    if (scale < 4) {
      for (std::size_t i = 0; i < pa.size(); ++i) {
        pa[i] = detail::pool2(pa[i], h, w);
        pb[i] = detail::pool2(pb[i], h, w);
      }
      h /= 2;
      w /= 2;
    }
  }
  const bool exact = a.vec() == b.vec();
  if (exact) result = 1.0;
  return {result, ms_ssim_to_db(result), exact};
}

struct RdPoint {
  std::string model_id;
  double lambda2 = 0;
  double bpp = 0;
  double psnr_rgb = 0;
  double ms_ssim = 0;
  double ms_ssim_db = 0;

  bool operator==(const RdPoint&) const = default;
};

struct RdCurve {
  std::string label;
  std::vector<RdPoint> points;

  bool operator==(const RdCurve&) const = default;
};

enum class QualityMetric { kPsnrRgb, kMsSsimDb };

/// Least-squares cubic coefficients c0..c3 of y as a function of x.
inline std::array<double, 4> fit_cubic(const std::vector<double>& x, const std::vector<double>& y) {
  Eigen::MatrixXd A(x.size(), 4);
  Eigen::VectorXd b(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int k = 0; k < 4; ++k) A(Eigen::Index(i), k) = std::pow(x[i], k);
    b(Eigen::Index(i)) = y[i];
  }
  Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  return {c(0), c(1), c(2), c(3)};
}

inline double poly_eval(const std::array<double, 4>& c, double x) { return c[0] + x * (c[1] + x * (c[2] + x * c[3])); }

inline double poly_integral(const std::array<double, 4>& c, double lo, double hi) {
  auto prim = [&](double x) { return x * (c[0] + x * (c[1] / 2 + x * (c[2] / 3 + x * c[3] / 4))); };
  return prim(hi) - prim(lo);
}

struct BdFit {
  std::array<double, 4> anchor{}, test{};
  double lo = 0, hi = 0;
};

inline std::pair<std::vector<double>, std::vector<double>> curve_samples(const RdCurve& c, QualityMetric m) {
  if (c.points.size() < 4)
    throw std::invalid_argument("curve '" + c.label + "' has " + std::to_string(c.points.size()) +
                                " points; BD-rate needs at least 4");
  std::vector<double> q, r;
  for (const auto& p : c.points) {
    if (!(p.bpp > 0)) throw std::invalid_argument("curve '" + c.label + "' has a non-positive rate");
    q.push_back(m == QualityMetric::kPsnrRgb ? p.psnr_rgb : p.ms_ssim_db);
    r.push_back(std::log10(p.bpp));
  }
  return {q, r};
}

inline BdFit bd_fit(const RdCurve& anchor, const RdCurve& test, QualityMetric m) {
  auto [qa, ra] = curve_samples(anchor, m);
  auto [qt, rt] = curve_samples(test, m);
  BdFit f;
  f.lo = std::max(*std::min_element(qa.begin(), qa.end()), *std::min_element(qt.begin(), qt.end()));
  f.hi = std::min(*std::max_element(qa.begin(), qa.end()), *std::max_element(qt.begin(), qt.end()));
  if (!(f.hi > f.lo))
    throw std::invalid_argument("curves '" + anchor.label + "' and '" + test.label + "' have no quality overlap");
  f.anchor = fit_cubic(qa, ra);
  f.test = fit_cubic(qt, rt);
  return f;
}

/// Bjontegaard delta rate in percent of `test` against `anchor`; negative is a saving.
inline double bd_rate(const RdCurve& anchor, const RdCurve& test, QualityMetric m = QualityMetric::kPsnrRgb) {
  const BdFit f = bd_fit(anchor, test, m);
  const double diff = (poly_integral(f.test, f.lo, f.hi) - poly_integral(f.anchor, f.lo, f.hi)) / (f.hi - f.lo);
  return (std::pow(10.0, diff) - 1.0) * 100.0;
}

inline std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

inline constexpr const char* kRdCsvHeader = "label,lambda2,bpp,psnr_rgb_db,ms_ssim,ms_ssim_db";

inline std::string emit_rd_csv(const std::vector<RdCurve>& curves) {
  if (curves.empty()) throw std::invalid_argument("emit_rd_csv: no curves");
  std::string out = std::string(kRdCsvHeader) + "\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      out += c.label + "," + shortest(p.lambda2) + "," + shortest(p.bpp) + "," + shortest(p.psnr_rgb) + "," +
             shortest(p.ms_ssim) + "," + shortest(p.ms_ssim_db) + "\n";
  return out;
}

/// Parses rows back into curves, grouped by label in first-seen order.
inline std::vector<RdCurve> parse_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRdCsvHeader) throw std::invalid_argument("RD CSV: missing or wrong header");
  std::vector<RdCurve> curves;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw std::invalid_argument("RD CSV line " + std::to_string(lineno) + ": expected 6 fields");
    RdPoint p;
    p.model_id = f[0];
    p.lambda2 = parse_double(f[1]);
    p.bpp = parse_double(f[2]);
    p.psnr_rgb = parse_double(f[3]);
    p.ms_ssim = parse_double(f[4]);
    p.ms_ssim_db = parse_double(f[5]);
    auto it = std::find_if(curves.begin(), curves.end(), [&](const RdCurve& c) { return c.label == f[0]; });
    if (it == curves.end()) {
      curves.push_back({f[0], {}});
      it = std::prev(curves.end());
    }
    it->points.push_back(p);
  }
  return curves;
}

/// Sorts points by rate, the order BD computation and plots expect.
inline void sort_by_rate(RdCurve& c) {
  std::stable_sort(c.points.begin(), c.points.end(), [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
}

inline std::string bd_report(const RdCurve& anchor, const std::vector<RdCurve>& tests) {
  std::ostringstream os;
  std::size_t width = 6;
  width = std::max(width, anchor.label.size());
  for (const auto& t : tests) width = std::max(width, t.label.size());
  auto row = [&](const std::string& label, double psnr, double ssim) {
    os << std::left << std::setw(int(width)) << label << "  " << std::right << std::fixed << std::setprecision(2)
       << std::setw(9) << psnr << "%  " << std::setw(9) << ssim << "%\n";
  };
  os << std::left << std::setw(int(width)) << "label" << "  " << std::right << std::setw(10) << "PSNR-RGB" << "  "
     << std::setw(10) << "MS-SSIM" << "\n";
  row(anchor.label, 0.0, 0.0);
  for (const auto& t : tests)
    row(t.label, bd_rate(anchor, t, QualityMetric::kPsnrRgb), bd_rate(anchor, t, QualityMetric::kMsSsimDb));
  return os.str();
}

}  // namespace manf
