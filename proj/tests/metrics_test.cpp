#include <gtest/gtest.h>

#include <random>

#include "manf/image_io.hpp"
#include "manf/metrics.hpp"

using namespace manf;

namespace {

Tensor<float> flat(std::size_t h, std::size_t w, float v) { return Tensor<float>(Shape{1, 3, h, w}, v); }

Tensor<float> noisy(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  Tensor<float> t(Shape{1, 3, h, w});
  for (auto& v : t.data()) v = float(u(rng)) / 255.0f;
  return t;
}

RdCurve curve(const std::string& label, std::vector<std::pair<double, double>> rate_quality) {
  RdCurve c{label, {}};
  double lam = 0.1;
  for (auto [r, q] : rate_quality) {
    c.points.push_back({label, lam, r, q, 1 - std::pow(10.0, -q / 20), q / 2});
    lam /= 2;
  }
  return c;
}

// Exact cubic through 4 points, evaluated by Lagrange's formula.
double lagrange(const std::vector<double>& x, const std::vector<double>& y, double t) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double l = 1;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (j != i) l *= (t - x[j]) / (x[i] - x[j]);
    s += y[i] * l;
  }
  return s;
}

double trapezoid_bd(const RdCurve& a, const RdCurve& b) {
  std::vector<double> qa, ra, qb, rb;
  for (auto& p : a.points) qa.push_back(p.psnr_rgb), ra.push_back(std::log10(p.bpp));
  for (auto& p : b.points) qb.push_back(p.psnr_rgb), rb.push_back(std::log10(p.bpp));
  const double lo = std::max(*std::min_element(qa.begin(), qa.end()), *std::min_element(qb.begin(), qb.end()));
  const double hi = std::min(*std::max_element(qa.begin(), qa.end()), *std::max_element(qb.begin(), qb.end()));
  const int n = 200000;
  double acc = 0;
  for (int i = 0; i <= n; ++i) {
    const double t = lo + (hi - lo) * i / n;
    const double d = lagrange(qb, rb, t) - lagrange(qa, ra, t);
    acc += (i == 0 || i == n ? 0.5 : 1.0) * d;
  }
  return (std::pow(10.0, acc / n) - 1) * 100;
}

}  // namespace

TEST(Psnr, SpotValues) {
  EXPECT_NEAR(psnr_rgb(flat(4, 4, 0.0f), flat(4, 4, 0.1f)).db, 20.0, 1e-5);
  EXPECT_NEAR(psnr_rgb(flat(4, 4, 0.0f), flat(4, 4, 1.0f)).db, 0.0, 1e-12);
  EXPECT_NEAR(psnr_from_mse(650.25).db, 20.0, 1e-12);
  auto same = psnr_rgb(flat(4, 4, 0.3f), flat(4, 4, 0.3f));
  EXPECT_TRUE(same.exact);
  EXPECT_EQ(same.db, kQualityCapDb);
  EXPECT_THROW(psnr_rgb(flat(4, 4, 0), flat(4, 5, 0)), ShapeError);
}

TEST(Psnr, PermutationInvariant) {
  auto a = noisy(8, 8, 1), b = noisy(8, 8, 2);
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  Tensor<float> pa(a.shape()), pb(b.shape());
  for (std::size_t i = 0; i < perm.size(); ++i) pa[i] = a[perm[i]], pb[i] = b[perm[i]];
  EXPECT_NEAR(psnr_rgb(a, b).db, psnr_rgb(pa, pb).db, 1e-12);
}

TEST(Bpp, Definition) {
  EXPECT_DOUBLE_EQ(bpp(180000, 1200, 1200), 1.0);
  EXPECT_DOUBLE_EQ(bpp(0, 1200, 1200), 0.0);
  EXPECT_THROW(bpp(1, 0, 5), std::invalid_argument);
}

TEST(MsSsim, IdentityAndDecibels) {
  auto a = noisy(176, 200, 4);
  auto r = ms_ssim(a, a);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.db, kQualityCapDb);
  EXPECT_NEAR(ms_ssim_to_db(0.9), 10.0, 1e-12);
  EXPECT_NEAR(ms_ssim_to_db(0.99), 20.0, 1e-12);
}

TEST(MsSsim, ConstantImagesReduceToLuminanceTerm) {
  const double ma = 0.4 * 255, mb = 0.6 * 255, c1 = std::pow(0.01 * 255, 2);
  const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
  auto r = ms_ssim(flat(192, 192, 0.4f), flat(192, 192, 0.6f));
  EXPECT_NEAR(r.value, std::pow(l, 0.1333), 1e-6);
}

TEST(MsSsim, DegradesWithNoiseAndRejectsSmallImages) {
  auto a = noisy(176, 176, 5);
  Tensor<float> b = a;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 0.05);
  for (auto& v : b.data()) v = std::clamp(v + float(n(rng)), 0.0f, 1.0f);
  auto r = ms_ssim(a, b);
  EXPECT_LT(r.value, 1.0);
  EXPECT_GT(r.value, 0.0);
  try {
    ms_ssim(flat(175, 300, 0), flat(175, 300, 0));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("176"), std::string::npos);
  }
}

TEST(BdRate, IdentityAndDoubledRate) {
  auto a = curve("a", {{0.2, 28}, {0.4, 31}, {0.8, 34}, {1.6, 37}});
  EXPECT_EQ(bd_rate(a, a), 0.0);
  RdCurve b = a;
  for (auto& p : b.points) p.bpp *= 2;
  EXPECT_NEAR(bd_rate(a, b), 100.0, 1e-9);
  EXPECT_NEAR(bd_rate(a, b, QualityMetric::kMsSsimDb), 100.0, 1e-9);
}

TEST(BdRate, MatchesIndependentIntegration) {
  auto a = curve("a", {{0.15, 27.1}, {0.33, 30.4}, {0.71, 33.2}, {1.42, 36.9}});
  auto b = curve("b", {{0.14, 27.6}, {0.30, 30.9}, {0.66, 33.4}, {1.30, 37.5}});
  EXPECT_NEAR(bd_rate(a, b), trapezoid_bd(a, b), 0.01);
  EXPECT_LT(bd_rate(a, b), 0);
  EXPECT_GT(bd_rate(b, a), 0);
}

TEST(BdRate, Errors) {
  auto a = curve("a", {{0.2, 28}, {0.4, 31}, {0.8, 34}, {1.6, 37}});
  auto far = curve("far", {{0.2, 48}, {0.4, 51}, {0.8, 54}, {1.6, 57}});
  EXPECT_THROW(bd_rate(a, far), std::invalid_argument);
  auto small = curve("tiny", {{0.2, 28}, {0.4, 31}, {0.8, 34}});
  try {
    bd_rate(a, small);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("tiny"), std::string::npos);
  }
}

TEST(RdCsv, EmitParseDeterminism) {
  auto a = curve("ms", {{0.11, 27.13}, {0.2, 29.5}, {0.35, 31.0}, {0.6, 33.3}, {0.9, 35.1}, {1.4, 37.0}});
  auto b = curve("fine", {{0.12, 27.0}, {0.22, 29.2}, {0.37, 30.8}, {0.64, 33.0}, {0.93, 34.9}, {1.5, 36.8}});
  const std::string csv = emit_rd_csv({a, b});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
  EXPECT_EQ(csv, emit_rd_csv({a, b}));
  auto back = parse_rd_csv(csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], a);
  EXPECT_EQ(back[1], b);
  EXPECT_THROW(emit_rd_csv({}), std::invalid_argument);
  EXPECT_THROW(parse_rd_csv("nope\n"), std::invalid_argument);
}

TEST(RdCsv, ReportLayout) {
  auto a = curve("anchor", {{0.2, 28}, {0.4, 31}, {0.8, 34}, {1.6, 37}});
  RdCurve b = a;
  b.label = "test";
  for (auto& p : b.points) p.bpp *= 0.9;
  const std::string r = bd_report(a, {a, b});
  EXPECT_NE(r.find("PSNR-RGB"), std::string::npos);
  EXPECT_LT(r.find("PSNR-RGB"), r.find("MS-SSIM"));
  EXPECT_NE(r.find("0.00%"), std::string::npos);
  EXPECT_NE(r.find("-10.00%"), std::string::npos);
}

TEST(Ppm, RoundTripAndErrors) {
  auto img = noisy(5, 7, 9);
  Bytes b = encode_ppm(img);
  EXPECT_EQ(decode_ppm(b).vec(), img.vec());
  EXPECT_EQ(encode_ppm(decode_ppm(b)), b);
  std::string red = "P6\n# red\n2 2\n255\n";
  Bytes rb(red.begin(), red.end());
  for (int i = 0; i < 4; ++i) rb.insert(rb.end(), {255, 0, 0});
  auto t = decode_ppm(rb);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(t.plane(0, 0)[i], 1.0f);
    EXPECT_EQ(t.plane(0, 1)[i], 0.0f);
    EXPECT_EQ(t.plane(0, 2)[i], 0.0f);
  }
  std::string deep = "P6 2 2 65535\n";
  try {
    decode_ppm(Bytes(deep.begin(), deep.end()));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("maxval"), std::string::npos);
  }
  EXPECT_THROW(decode_ppm(Bytes(rb.begin(), rb.end() - 1)), FormatError);
  std::string p3 = "P3 1 1 255\n0 0 0";
  EXPECT_THROW(decode_ppm(Bytes(p3.begin(), p3.end())), FormatError);
}
