#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dpgs/losses/losses.hpp"

using namespace dpgs;

namespace {

ColorField random_image(int w, int h, std::uint64_t seed, double lo = 0.2, double hi = 0.8) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ColorField f(w, h);
  for (double& v : f.data()) v = u(rng);
  return f;
}

ColorField shifted(const ColorField& f, double d) {
  ColorField g = f;
  for (double& v : g.data()) v += d;
  return g;
}

ScalarField from_rows(int w, int h, std::initializer_list<double> v) {
  return ScalarField(w, h, std::vector<double>(v));
}

ScalarField constant(int w, int h, double v) {
  ScalarField f(w, h);
  for (double& x : f.data()) x = v;
  return f;
}

}  // namespace

TEST(LBasic, IdentityIsZero) {
  const ColorField t = random_image(16, 16, 1);
  EXPECT_NEAR(l_basic(t, t), 0.0, 1e-15);
}

TEST(LBasic, ConstantShiftL1Part) {
  const ColorField t = random_image(16, 16, 2);
  const ColorField o = shifted(t, 0.1);
  EXPECT_NEAR(l1(o, t), 0.1, 1e-12);
  EXPECT_NEAR(l_basic(o, t, 0.0), 0.1, 1e-12);
  EXPECT_NEAR(l_basic(o, t, 0.2), 0.8 * 0.1 + 0.1 * (1 - ssim(o, t)), 1e-12);
}

TEST(LBasic, DimensionMismatch) {
  EXPECT_THROW(l_basic(ColorField(4, 4), ColorField(4, 5)), InvalidArgument);
}

TEST(LAb, VanishingTerms) {
  const ScalarField zero = constant(4, 4, 0.0), one = constant(4, 4, 1.0);
  EXPECT_EQ(l_ab(zero, one, zero, one, 1.0, 10.0), 0.0);
}

TEST(LAb, ComplementarityZeroesMse) {
  const ScalarField bs = from_rows(2, 2, {0.1, 0.5, 0.7, 0.3});
  ScalarField t(2, 2);
  for (std::size_t i = 0; i < 4; ++i) t[i] = 1 - bs[i];
  const ScalarField zero = constant(2, 2, 0.0);
  EXPECT_EQ(l_ab(bs, zero, zero, t, 5.0, 1.0), 0.0);
}

TEST(LAb, TwoByTwoHandArithmetic) {
  const ScalarField bs = from_rows(2, 2, {0.2, 0.4, 0.6, 0.8});
  const ScalarField dn = from_rows(2, 2, {0.1, 0.2, 0.3, 0.4});
  const ScalarField abar = from_rows(2, 2, {0.9, 0.8, 0.7, 0.6});
  ScalarField t(2, 2);
  for (std::size_t i = 0; i < 4; ++i) t[i] = 1 - bs[i];
  // mean(B_s*D) = (0.02+0.08+0.18+0.32)/4 = 0.15
  // mean(A*D)   = (0.09+0.16+0.21+0.24)/4 = 0.175
  EXPECT_NEAR(l_ab(bs, abar, dn, t, 1.0, 1.0), 0.15 - 0.175, 1e-15);
  // depth is normalized by d_far
  ScalarField d10 = dn;
  for (double& v : d10.data()) v *= 10;
  EXPECT_NEAR(l_ab(bs, abar, d10, t, 1.0, 10.0), -0.025, 1e-15);
}

TEST(LAb, DimensionMismatch) {
  EXPECT_THROW(l_ab(ScalarField(2, 2), ScalarField(2, 2), ScalarField(3, 2), ScalarField(2, 2), 1, 1),
               InvalidArgument);
}

TEST(LEdge, ZeroAndConstant) {
  const ScalarField depth = from_rows(4, 4, {1, 2, 3, 4, 2, 3, 4, 5, 1, 1, 2, 2, 5, 4, 3, 2});
  EXPECT_EQ(l_edge(constant(4, 4, 0.0), depth, 0.1, 10.0), 0.0);
  EXPECT_EQ(l_edge(constant(4, 4, 0.5), constant(4, 4, 3.0), 0.1, 10.0), 0.0);
}

TEST(LEdge, AlignedStepIgnoredBySmoothness) {
  const int n = 12;
  ScalarField bs(n, n), depth(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      bs.at(x, y) = x < n / 2 ? 0.1 : 0.6;
      depth.at(x, y) = x < n / 2 ? 2.0 : 6.0;
    }
  const double alpha_s = 50.0;
  const double magnitude = l_edge(bs, depth, 0.0, alpha_s);
  const double with_smooth = l_edge(bs, depth, 1.0, alpha_s);
  EXPECT_GT(magnitude, 0.05);
  EXPECT_LT(with_smooth - magnitude, 1e-12);

  // the same B_s step over flat depth is penalized by the smoothness term
  const ScalarField flat = constant(n, n, 4.0);
  EXPECT_GT(l_edge(bs, flat, 1.0, alpha_s), 0.02);
}

TEST(LMs, IdentityAndConstantOffset) {
  const ColorField t = random_image(16, 16, 3);
  EXPECT_EQ(l_ms(t, t, 0.5), 0.0);
  EXPECT_NEAR(l_ms(shifted(t, 0.1), t, 0.5), 0.1 * 1.5, 1e-12);
}

TEST(LMs, CheckerboardCancelsAtCoarseScales) {
  const ColorField t = random_image(16, 16, 4);
  ColorField o = t;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) o.at(x, y, c) += (x + y) % 2 ? 0.1 : -0.1;
  EXPECT_NEAR(l_ms(o, t, 0.5), 0.1, 1e-12);
}

TEST(LMs, ZeroLambdaIsPlainL1) {
  const ColorField o = random_image(12, 12, 5), t = random_image(12, 12, 6);
  EXPECT_EQ(l_ms(o, t, 0.0), l1(o, t));
}

TEST(LWat, CoefficientEndpoints) {
  const LossWeights lw;
  const auto c0 = wat_coefficients(0.0, lw), c1 = wat_coefficients(1.0, lw), ch = wat_coefficients(0.5, lw);
  EXPECT_EQ(c0.alpha, 1.2);
  EXPECT_EQ(c0.beta, 0.8);
  EXPECT_EQ(c1.alpha, 0.8);
  EXPECT_EQ(c1.beta, 1.2);
  EXPECT_DOUBLE_EQ(ch.alpha, 1.0);
  EXPECT_DOUBLE_EQ(ch.beta, 1.0);
}

TEST(LWat, CoefficientsSumToTwo) {
  const LossWeights lw;
  for (int i = 0; i <= 100; ++i) {
    const auto c = wat_coefficients(i / 100.0, lw);
    EXPECT_NEAR(c.alpha + c.beta, 2.0, 1e-15);
  }
}

TEST(LWat, OutOfRangeIndexIsClamped) {
  const LossWeights lw;
  EXPECT_EQ(wat_coefficients(-0.5, lw).alpha, 1.2);
  EXPECT_EQ(wat_coefficients(1.5, lw).beta, 1.2);
  EXPECT_DOUBLE_EQ(l_wat(1.0, 2.0, 0.5, 0.0, lw), 1.2 + 1.6 + 0.5);
}

TEST(LTotal, Linearity) {
  LossWeights lw;
  EXPECT_EQ(l_total(LossBreakdown{}, lw), 0.0);
  lw.w1 = lw.w2 = lw.w3 = lw.w4 = lw.w5 = 1.0;
  LossBreakdown unit{1, 1, 1, 1, 1};
  EXPECT_EQ(l_total(unit, lw), 5.0);
}

TEST(LTotal, DefaultWeightsDotProduct) {
  const LossWeights lw;
  const LossBreakdown p{0.5, -0.02, 0.3, 0.1, 0.2};
  // 0.5 - 0.001 + 0.015 + 0.001 + 0.04
  EXPECT_NEAR(l_total(p, lw), 0.555, 1e-15);
}

TEST(LTotal, NonFinitePartDiverges) {
  LossBreakdown p{};
  p.edge = std::nan("");
  EXPECT_THROW(l_total(p, LossWeights{}), DivergedError);
}

TEST(Metrics, IdenticalImages) {
  const ColorField t = random_image(16, 16, 7);
  EXPECT_EQ(psnr(t, t), 100.0);
  EXPECT_NEAR(ssim(t, t), 1.0, 1e-12);
}

TEST(Metrics, UniformDifferencePsnr) {
  const ColorField t = random_image(16, 16, 8);
  EXPECT_NEAR(psnr(shifted(t, 0.1), t), 20.0, 1e-9);
}

TEST(Metrics, SsimNearConstant) {
  ColorField a(16, 16);
  for (double& v : a.data()) v = 0.4;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1e-3);
  ColorField b = a;
  for (double& v : b.data()) v += n(rng);
  EXPECT_GE(ssim(a, b), 0.99);
}
