#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "manf/ops.hpp"

using namespace manf;
using manf::testing::random_tensor;

namespace {

Var<double> cst(Tensor<double> t) { return Var<double>::constant(std::move(t)); }

Tensor<double> ramp(Shape s) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = double(i) * 0.5 - 3.0;
  return t;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  auto x = ramp(Shape{1, 1, 4, 4});
  auto y = conv2d(cst(x), cst(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)), cst(Tensor<double>(Shape{1, 1, 1, 1})), 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(max_abs_diff(y.value(), x), 0.0);
}

TEST(Conv2d, StrideTwoShape) {
  auto y = conv2d(cst(Tensor<double>(Shape{1, 1, 256, 256})), cst(Tensor<double>(Shape{2, 1, 3, 3})),
                  cst(Tensor<double>(Shape{2, 1, 1, 1})), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 128, 128}));
}

TEST(Conv2d, AllOnesSumsToNine) {
  // Direct summation: nine products of one.
  auto y = conv2d(cst(Tensor<double>(Shape{1, 1, 3, 3}, 1.0)), cst(Tensor<double>(Shape{1, 1, 3, 3}, 1.0)),
                  cst(Tensor<double>(Shape{1, 1, 1, 1})), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.value()[0], 9.0);
}

TEST(Conv2d, RejectsBadShapes) {
  auto b = cst(Tensor<double>(Shape{1, 1, 1, 1}));
  EXPECT_THROW(conv2d(cst(Tensor<double>(Shape{1, 2, 4, 4})), cst(Tensor<double>(Shape{1, 1, 3, 3})), b, 1, 0),
               ShapeError);
  EXPECT_THROW(conv2d(cst(Tensor<double>(Shape{1, 1, 2, 2})), cst(Tensor<double>(Shape{1, 1, 3, 3})), b, 1, 0),
               ShapeError);
}

TEST(Conv2d, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  auto x = random_tensor(Shape{2, 3, 7, 6}, rng);
  auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
  auto b = random_tensor(Shape{4, 1, 1, 1}, rng);
  const std::size_t s = 2, p = 1;
  auto y = conv2d(cst(x), cst(w), cst(b), s, p).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t co = 0; co < 4; ++co)
      for (std::size_t oy = 0; oy < y.shape().h(); ++oy)
        for (std::size_t ox = 0; ox < y.shape().w(); ++ox) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < 3; ++ci)
            for (long ky = 0; ky < 3; ++ky)
              for (long kx = 0; kx < 3; ++kx) {
                long iy = long(oy * s) + ky - long(p), ix = long(ox * s) + kx - long(p);
                if (iy < 0 || ix < 0 || iy >= 7 || ix >= 6) continue;
                acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy, ix);
              }
          EXPECT_NEAR(y.at(n, co, oy, ox), acc, 1e-12);
        }
}

TEST(TransposedConv2d, StrideTwoShape) {
  auto y = transposed_conv2d(cst(Tensor<double>(Shape{1, 2, 128, 128})), cst(Tensor<double>(Shape{2, 1, 3, 3})),
                             cst(Tensor<double>(Shape{1, 1, 1, 1})), 2, 1, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 256, 256}));
}

TEST(TransposedConv2d, ScatterOracle) {
  Tensor<double> k(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  auto y = transposed_conv2d(cst(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)), cst(k), cst(Tensor<double>(Shape{1, 1, 1, 1})),
                             2, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.value().vec(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(TransposedConv2d, AdjointOfConv) {
  std::mt19937_64 rng(11);
  for (std::size_t stride : {1u, 2u}) {
    auto x = random_tensor(Shape{1, 3, 8, 8}, rng);
    auto w = random_tensor(Shape{5, 3, 3, 3}, rng);
    auto zero_out = cst(Tensor<double>(Shape{5, 1, 1, 1}));
    auto zero_in = cst(Tensor<double>(Shape{3, 1, 1, 1}));
    auto cx = conv2d(cst(x), cst(w), zero_out, stride, 0).value();
    auto y = random_tensor(cx.shape(), rng);
    const std::size_t op = (8 - 3) % stride;
    auto ty = transposed_conv2d(cst(y), cst(w), zero_in, stride, 0, op).value();
    ASSERT_EQ(ty.shape(), x.shape());
    const double lhs = dot(cx, y), rhs = dot(x, ty);
    EXPECT_NEAR(lhs, rhs, 1e-5 * std::abs(lhs));
  }
}

TEST(Conv2d, RoundTripRestoresExtents) {
  auto down = conv2d(cst(Tensor<double>(Shape{1, 1, 64, 48})), cst(Tensor<double>(Shape{2, 1, 3, 3})),
                     cst(Tensor<double>(Shape{2, 1, 1, 1})), 2, 1);
  auto up = transposed_conv2d(down, cst(Tensor<double>(Shape{2, 1, 3, 3})), cst(Tensor<double>(Shape{1, 1, 1, 1})), 2,
                              1, 1);
  EXPECT_EQ(up.shape(), (Shape{1, 1, 64, 48}));
}

TEST(Gdn, UnitDenominatorIsIdentity) {
  std::mt19937_64 rng(3);
  auto x = random_tensor(Shape{1, 3, 4, 4}, rng);
  auto beta = cst(Tensor<double>(Shape{3, 1, 1, 1}, 1.0));
  auto gamma = cst(Tensor<double>(Shape{3, 3, 1, 1}, 0.0));
  EXPECT_EQ(max_abs_diff(gdn(cst(x), beta, gamma, false).value(), x), 0.0);
  EXPECT_EQ(max_abs_diff(gdn(cst(x), beta, gamma, true).value(), x), 0.0);
}

TEST(Gdn, ScalarFormula) {
  auto y = gdn(cst(Tensor<double>(Shape{1, 1, 1, 1}, 2.0)), cst(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)),
               cst(Tensor<double>(Shape{1, 1, 1, 1}, 0.5)), false);
  EXPECT_NEAR(y.value()[0], 2.0 / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(y.value()[0], 1.15470, 1e-5);
}

TEST(Gdn, InverseCancelsWhenGammaIsZero) {
  std::mt19937_64 rng(5);
  auto x = random_tensor(Shape{1, 4, 5, 5}, rng);
  auto beta = cst(random_tensor(Shape{4, 1, 1, 1}, rng, 0.1, 3.0));
  auto gamma = cst(Tensor<double>(Shape{4, 4, 1, 1}));
  auto y = gdn(gdn(cst(x), beta, gamma, false), beta, gamma, true);
  EXPECT_LT(max_abs_diff(y.value(), x), 1e-6);
}

TEST(Gdn, RejectsNonPositiveBeta) {
  auto x = cst(Tensor<double>(Shape{1, 2, 2, 2}, 1.0));
  Tensor<double> b(Shape{2, 1, 1, 1}, 1.0);
  b[1] = 0.0;
  EXPECT_THROW(gdn(x, cst(b), cst(Tensor<double>(Shape{2, 2, 1, 1})), false), std::invalid_argument);
}

TEST(LeakyRelu, Values) {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{3.0, -2.0, 0.0});
  auto y = leaky_relu(cst(x), 0.01).value();
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  EXPECT_DOUBLE_EQ(y[1], -0.02);
  EXPECT_DOUBLE_EQ(y[2], 0.0);
}

TEST(Concat, ShapeValuesAndGradient) {
  std::mt19937_64 rng(9);
  auto a = random_tensor(Shape{1, 2, 4, 4}, rng);
  auto b = random_tensor(Shape{1, 3, 4, 4}, rng);
  EXPECT_EQ(concat_channels(cst(a), cst(b)).shape(), (Shape{1, 5, 4, 4}));

  auto c = concat_channels(cst(a), cst(Tensor<double>(a.shape())));
  EXPECT_EQ(max_abs_diff(slice_channels(c, 0, 2).value(), a), 0.0);

  Graph<double> g;
  auto va = g.input(a);
  auto vb = g.input(b);
  g.backward(sum(concat_channels(va, vb)));
  EXPECT_EQ(max_abs_diff(va.grad(), Tensor<double>(a.shape(), 1.0)), 0.0);

  EXPECT_THROW(concat_channels(cst(a), cst(Tensor<double>(Shape{1, 1, 4, 5}))), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Graph<double> g;
  auto x = g.input(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  g.backward(sum(x));
  EXPECT_EQ(x.grad().vec(), (std::vector<double>{1, 1, 1, 1}));
}

TEST(Backward, RejectsNonScalar) {
  Graph<double> g;
  auto x = g.input(Tensor<double>(Shape{1, 1, 2, 2}));
  EXPECT_THROW(g.backward(x), std::invalid_argument);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  Parameter<double> p("p", Tensor<double>(Shape{1, 1, 1, 2}, 1.0));
  for (int i = 0; i < 2; ++i) {
    Graph<double> g;
    g.backward(sum(g.leaf(p)));
  }
  EXPECT_EQ(p.grad.vec(), (std::vector<double>{2, 2}));
  p.zero_grad();
  EXPECT_EQ(p.grad.vec(), (std::vector<double>{0, 0}));
}

TEST(Backward, DeterministicAcrossRuns) {
  std::mt19937_64 rng(21);
  auto x = random_tensor(Shape{1, 4, 9, 9}, rng).cast<float>();
  auto w = random_tensor(Shape{6, 4, 3, 3}, rng).cast<float>();
  auto run = [&] {
    Parameter<float> pw("w", w), pb("b", Tensor<float>(Shape{6, 1, 1, 1}));
    Graph<float> g;
    auto y = conv2d(Var<float>::constant(x), g.leaf(pw), g.leaf(pb), 2, 1);
    auto loss = sum(square(y));
    g.backward(loss);
    return std::pair{loss.value()[0], pw.grad.vec()};
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Tensor, FiniteOutputsOnFiniteInputs) {
  std::mt19937_64 rng(2);
  auto x = cst(random_tensor(Shape{1, 3, 8, 8}, rng, -5, 5));
  auto y = gdn(conv2d(x, cst(random_tensor(Shape{3, 3, 3, 3}, rng)), cst(Tensor<double>(Shape{3, 1, 1, 1})), 1, 1),
               cst(Tensor<double>(Shape{3, 1, 1, 1}, 1e-6)), cst(random_tensor(Shape{3, 3, 1, 1}, rng, 0, 1)), false);
  EXPECT_TRUE(y.value().all_finite());
}
