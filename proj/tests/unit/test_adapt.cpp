#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dpgs/adapt/water.hpp"

using namespace dpgs;

namespace {

ColorField tinted(int w, int h, std::array<double, 3> mean, std::uint64_t seed, double amp = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  ColorField f(w, h);
  for (std::size_t i = 0; i < f.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c) f[3 * i + c] = mean[c] + u(rng);
  return f;
}

ColorField with_ratio(double ratio) {
  ColorField f(8, 8);
  for (std::size_t i = 0; i < f.pixel_count(); ++i) {
    f[3 * i] = 0.1;
    f[3 * i + 1] = 0.4;
    f[3 * i + 2] = 0.4 * ratio;
  }
  return f;
}

WaterProfile profile_for(WaterClass c, double w) {
  WaterProfile p;
  p.probs = {0.1, 0.1, 0.1};
  p.probs[static_cast<int>(c)] = 0.8;
  p.w = w;
  return p;
}

}  // namespace

TEST(Classifier, ZeroWeightsGiveUniformProfile) {
  const WaterProfile p = classify_water(tinted(16, 16, {0.3, 0.5, 0.2}, 1), ClassifierWeights{});
  for (double q : p.probs) EXPECT_NEAR(q, 1.0 / 3, 1e-15);
  EXPECT_NEAR(p.w, 0.5, 1e-15);
}

TEST(Classifier, SoftmaxSimplex) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.02, 0.9);
  for (int n = 0; n < 50; ++n) {
    const ClassifierWeights cw = ClassifierWeights::random(100 + n);
    const WaterProfile p = classify_water(tinted(8, 8, {u(rng), u(rng), u(rng)}, n), cw);
    EXPECT_NEAR(p.probs[0] + p.probs[1] + p.probs[2], 1.0, 1e-9);
    for (double q : p.probs) {
      EXPECT_GT(q, 0.0);
      EXPECT_LT(q, 1.0);
    }
    EXPECT_GE(p.w, 0.0);
    EXPECT_LE(p.w, 1.0);
  }
}

TEST(Classifier, PixelPermutationInvariance) {
  const ColorField img = tinted(16, 16, {0.1, 0.4, 0.5}, 3, 0.2);
  std::vector<std::size_t> order(img.pixel_count());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(4));
  ColorField shuffled(16, 16);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int c = 0; c < 3; ++c) shuffled[3 * i + c] = img[3 * order[i] + c];
  const ClassifierWeights cw = ClassifierWeights::random(5, 1.0);
  const WaterProfile a = classify_water(img, cw), b = classify_water(shuffled, cw);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(a.probs[k], b.probs[k], 1e-12);
  EXPECT_NEAR(a.bg_ratio, b.bg_ratio, 1e-12);
}

TEST(Classifier, BlueTintIsClear) {
  const WaterProfile p = classify_water(tinted(32, 32, {0.1, 0.3, 0.6}, 6), default_classifier());
  EXPECT_EQ(p.argmax(), WaterClass::clear);
}

TEST(Classifier, AgreesWithHeuristicOnCorpus) {
  const auto corpus = tinted_corpus(2024, 64);
  const ClassifierWeights cw = default_classifier();
  int agree = 0;
  for (const auto& s : corpus)
    agree += classify_water(s.image, cw).argmax() == class_from_index(water_index_heuristic(s.image));
  EXPECT_GE(agree, static_cast<int>(0.9 * corpus.size())) << agree << " of " << corpus.size();
}

TEST(Heuristic, EndpointsAndMidpoint) {
  EXPECT_NEAR(water_index_heuristic(with_ratio(1.3)), 0.0, 1e-12);
  EXPECT_NEAR(water_index_heuristic(with_ratio(0.8)), 1.0, 1e-12);
  EXPECT_NEAR(water_index_heuristic(with_ratio(1.05)), 0.5, 1e-12);
  EXPECT_EQ(water_index_heuristic(with_ratio(2.0)), 0.0);
  EXPECT_EQ(water_index_heuristic(with_ratio(0.3)), 1.0);
}

TEST(Heuristic, RejectsZeroGreen) {
  EXPECT_THROW(water_index_heuristic(ColorField(4, 4)), InvalidArgument);
}

TEST(Controller, PreEnablePhase) {
  const ControllerConfig cfg;
  const std::int64_t total = 2000;
  EXPECT_EQ(enable_iteration(total, cfg), 667);
  for (std::int64_t it : {0, 1, 300, 666}) {
    const auto s = controller(profile_for(WaterClass::turbid, 0.9), it, total, cfg);
    EXPECT_FALSE(s.water_path_enabled);
    EXPECT_EQ(s.lr_attenuation, 0.0);
    EXPECT_EQ(s.lr_scattering, 0.0);
    EXPECT_GT(s.lr_gaussians.position, 0.0);
  }
  EXPECT_TRUE(controller(profile_for(WaterClass::turbid, 0.9), 667, total, cfg).water_path_enabled);
}

TEST(Controller, ClearDecaysToFinalValue) {
  const ControllerConfig cfg;
  const std::int64_t total = 3000;
  const WaterProfile p = profile_for(WaterClass::clear, 0.1);
  const auto first = controller(p, enable_iteration(total, cfg), total, cfg);
  EXPECT_DOUBLE_EQ(first.lr_attenuation, 1e-4);
  const auto last = controller(p, total - 1, total, cfg);
  EXPECT_DOUBLE_EQ(last.lr_attenuation, 5e-5);
  EXPECT_DOUBLE_EQ(last.lr_scattering, 5e-5);
  double prev = 1.0;
  for (std::int64_t it = enable_iteration(total, cfg); it < total; ++it) {
    const double lr = controller(p, it, total, cfg).lr_attenuation;
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Controller, TurbidHoldsRate) {
  const ControllerConfig cfg;
  const std::int64_t total = 900;
  const WaterProfile p = profile_for(WaterClass::turbid, 0.9);
  for (std::int64_t it = enable_iteration(total, cfg); it < total; ++it) {
    const auto s = controller(p, it, total, cfg);
    EXPECT_EQ(s.lr_attenuation, 1e-4);
    EXPECT_EQ(s.lr_scattering, 1e-4);
  }
}

TEST(Controller, CapsAndCoefficients) {
  ControllerConfig cfg;
  cfg.lr_physics_start = 1e-3;
  cfg.lr_physics_end = 1e-3;
  const auto s = controller(profile_for(WaterClass::turbid, 1.0), 99, 100, cfg);
  EXPECT_EQ(s.lr_attenuation, 5e-4);
  EXPECT_EQ(s.lr_scattering, 1e-4);
  EXPECT_EQ(s.alpha, 0.8);
  EXPECT_EQ(s.beta, 1.2);
}

TEST(Controller, FlagFlipsAtFraction) {
  ControllerConfig cfg;
  cfg.enable_fraction = 0.25;
  const WaterProfile p = profile_for(WaterClass::medium, 0.5);
  for (std::int64_t it = 0; it < 40; ++it) EXPECT_EQ(controller(p, it, 40, cfg).water_path_enabled, it >= 10);
  EXPECT_THROW(controller(p, 40, 40, cfg), InvalidArgument);
}
