#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dpgs/physics/attenuation.hpp"
#include "dpgs/synth/scene.hpp"

using namespace dpgs;

namespace {

SceneSpec small_spec(std::uint64_t seed, WaterClass cls = WaterClass::turbid) {
  SceneSpec s = SceneSpec::for_class(cls, seed);
  s.n_gaussians = 60;
  s.width = s.height = 32;
  s.n_views = 3;
  return s;
}

}  // namespace

TEST(Degrade, ZeroDepthIsIdentity) {
  ColorField j(4, 4);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (double& v : j.data()) v = u(rng);
  const MediumParams m{{0.4, 0.2, 0.1}, 0.2, {0.1, 0.4, 0.5}};
  EXPECT_EQ(degrade(j, ScalarField(4, 4), m), j);
}

TEST(Degrade, PureBackscatterValues) {
  const MediumParams m{{0.3, 0.1, 0.05}, 0.1, {0.2, 0.5, 0.6}};
  const ColorField i = degrade(ColorField(1, 1), ScalarField(1, 1, 10.0), m);
  EXPECT_NEAR(i[0], 0.1264, 5e-5);
  EXPECT_NEAR(i[1], 0.3161, 5e-5);
  EXPECT_NEAR(i[2], 0.3793, 5e-5);
}

TEST(Degrade, FarLimitIsVeilingLight) {
  const MediumParams m{{0.3, 0.1, 0.05}, 0.1, {0.2, 0.5, 0.6}};
  const ColorField i = degrade(ColorField(1, 1, 0.9), ScalarField(1, 1, 2000.0), m);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(i[c], m.binf[c], 1e-12);
}

TEST(Degrade, RejectsNegativeDepth) {
  EXPECT_THROW(degrade(ColorField(1, 1), ScalarField(1, 1, -1.0), MediumParams{}), InvalidArgument);
}

TEST(Degrade, TransmissionMatchesAttenuationMap) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n = 0; n < 20; ++n) {
    ScalarField d(5, 5);
    for (double& v : d.data()) v = 12 * u(rng);
    AttenuationParams p;
    for (double& t : p.theta_beta) t = inverse_softplus(0.05 + 0.5 * u(rng));
    const auto beta = p.beta();
    const ColorField a = attenuation_map(d, ScalarField(5, 5), p, 1.0);
    // J = 1, no backscatter: the oracle output is its transmission term
    const ColorField t = degrade(ColorField(5, 5, 1.0), d, {{beta[0], beta[1], beta[2]}, 0.0, {0, 0, 0}});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], t[i], 1e-12);
  }
}

TEST(Scene, SameSeedIsBitIdentical) {
  const SceneBundle a = generate_scene(small_spec(5)), b = generate_scene(small_spec(5));
  EXPECT_EQ(a.clean, b.clean);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.degraded, b.degraded);
  EXPECT_EQ(a.truth, b.truth);
  const SceneBundle c = generate_scene(small_spec(6));
  EXPECT_NE(a.clean, c.clean);
}

TEST(Scene, NeutralMediumLeavesImagesClean) {
  SceneSpec s = small_spec(7);
  s.medium = MediumParams{};
  const SceneBundle b = generate_scene(s);
  EXPECT_EQ(b.degraded, b.clean);
}

TEST(Scene, DegradedIsSelfConsistent) {
  const SceneBundle b = generate_scene(small_spec(8));
  ASSERT_EQ(b.views(), 3u);
  for (std::size_t v = 0; v < b.views(); ++v) {
    EXPECT_EQ(b.degraded[v], degrade(b.clean[v], b.depth[v], b.truth.medium));
    for (double d : b.depth[v].data()) EXPECT_GT(d, 0.0);
  }
}

TEST(Scene, RedFadesFastest) {
  for (WaterClass cls : {WaterClass::clear, WaterClass::medium, WaterClass::turbid}) {
    const SceneSpec s = SceneSpec::for_class(cls, 9);
    EXPECT_GT(s.medium.beta[0], s.medium.beta[1]) << to_string(cls);
    const SceneBundle b = generate_scene(small_spec(9, cls));
    const auto jm = channel_means(b.clean[0]), im = channel_means(b.degraded[0]);
    EXPECT_LT(im[0] / jm[0], im[1] / jm[1]) << to_string(cls);
  }
}

TEST(Scene, ValidateRejectsBadSpecs) {
  SceneSpec s = small_spec(1);
  s.n_gaussians = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = small_spec(1);
  s.d_min = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = small_spec(1);
  s.medium.binf[2] = 1.5;
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Corpus, BalancedLabels) {
  const auto corpus = tinted_corpus(3, 4, 16);
  ASSERT_EQ(corpus.size(), 12u);
  int counts[3] = {};
  for (const auto& s : corpus) {
    ++counts[static_cast<int>(s.label)];
    EXPECT_EQ(s.image.width(), 16);
  }
  for (int c : counts) EXPECT_EQ(c, 4);
}
