#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dpgs/synth/scene.hpp"
#include "dpgs/train/adam.hpp"
#include "dpgs/train/restore.hpp"
#include "dpgs/train/trainer.hpp"

using namespace dpgs;

namespace {

ParamVector single(double v) {
  ParamVector p;
  p.add("x", std::vector<double>{v});
  return p;
}

ColorField random_image(int w, int h, std::uint64_t seed, double lo = 0.1, double hi = 0.9) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ColorField f(w, h);
  for (double& v : f.data()) v = u(rng);
  return f;
}

ScalarField random_depth(int w, int h, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ScalarField d(w, h);
  for (double& v : d.data()) v = u(rng);
  return d;
}

struct Physics {
  AttenuationParams atten;
  ScatterParams scatter = ScatterParams::zeros();
  MediumParams medium;  // the same model, in oracle form
};

Physics physics(std::array<double, 3> beta, double b, std::array<double, 3> binf) {
  Physics p;
  p.atten.gamma[0] = 0;
  for (int c = 0; c < 3; ++c) {
    p.atten.theta_beta[c] = inverse_softplus(beta[c]);
    p.scatter.binf_raw[c] = logit(binf[c]);
  }
  p.scatter.theta_b[0] = inverse_softplus(b);
  const auto be = p.atten.beta(), bi = p.scatter.binf();
  p.medium = {{be[0], be[1], be[2]}, p.scatter.b(), {bi[0], bi[1], bi[2]}};
  return p;
}

SceneSpec tiny_spec() {
  SceneSpec s = SceneSpec::for_class(WaterClass::turbid, 3);
  s.n_gaussians = 40;
  s.width = s.height = 24;
  s.n_views = 3;
  return s;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParams) {
  ParamVector p = single(0.7);
  AdamState st(p);
  adam_step(p, single(0.0), st, 0.1);
  EXPECT_EQ(p.data()[0], 0.7);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepIsLearningRate) {
  ParamVector p = single(0.0);
  AdamState st(p);
  adam_step(p, single(1.0), st, 0.1);
  EXPECT_NEAR(p.data()[0], -0.1 / (1 + 1e-8), 1e-15);
}

TEST(Adam, ConstantGradientApproachesSignStep) {
  ParamVector p = single(0.0);
  AdamState st(p);
  double prev = 0, step = 0;
  for (int i = 0; i < 2000; ++i) {
    adam_step(p, single(-3.0), st, 0.01);
    step = p.data()[0] - prev;
    prev = p.data()[0];
  }
  EXPECT_NEAR(step, 0.01, 1e-8);
}

TEST(Adam, NonFiniteGradientNamesSlot) {
  ParamVector p = single(0.0);
  AdamState st(p);
  try {
    adam_step(p, single(std::nan("")), st, 0.1);
    FAIL() << "expected divergence";
  } catch (const DivergedError& e) {
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
  }
}

TEST(Restore, NeutralMediumIsIdentity) {
  const Physics p = physics({0, 0, 0}, 0, {0.3, 0.3, 0.3});
  ASSERT_EQ(p.medium.b, 0.0);
  const ColorField img = random_image(10, 10, 1);
  const auto r = restore(img, random_depth(10, 10, 2, 1, 8), p.atten, p.scatter, neutral_profile(),
                         neutral_scatter_options());
  EXPECT_EQ(r.j_hat, img);
}

TEST(Restore, InvertsOracle) {
  const Physics p = physics({0.3, 0.12, 0.07}, 0.1, {0.1, 0.4, 0.5});
  const ColorField j = random_image(12, 12, 3);
  const ScalarField d = random_depth(12, 12, 4, 1, 5);
  const auto r = restore(degrade(j, d, p.medium), d, p.atten, p.scatter, neutral_profile(),
                         neutral_scatter_options());
  for (std::size_t i = 0; i < j.size(); ++i) EXPECT_NEAR(r.j_hat[i], j[i], 1e-10);
  for (auto v : r.valid) EXPECT_EQ(v, 1);
}

TEST(Restore, DeepPixelsAreMasked) {
  const Physics p = physics({0.3, 0.12, 0.07}, 0.1, {0.1, 0.4, 0.5});
  ScalarField d(4, 4, 2.0);
  d[3] = 100.0;  // exp(-30) in red
  const auto r = restore(ColorField(4, 4, 0.5), d, p.atten, p.scatter, neutral_profile(), neutral_scatter_options());
  EXPECT_EQ(r.valid[0], 1);
  EXPECT_EQ(r.valid[3], 0);
  for (double v : r.j_hat.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(FitPhysics, RecoversMediumFromExactData) {
  const Physics truth = physics({0.35, 0.15, 0.25}, 0.2, {0.12, 0.5, 0.3});
  std::vector<ColorField> clean, obs;
  std::vector<ScalarField> depth;
  for (int v = 0; v < 3; ++v) {
    clean.push_back(random_image(16, 16, 10 + v));
    depth.push_back(random_depth(16, 16, 20 + v, 1, 9));
    obs.push_back(degrade(clean.back(), depth.back(), truth.medium));
  }
  const PhysicsFit fit = fit_physics(clean, depth, obs);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(fit.medium.beta[c], truth.medium.beta[c], 1e-6);
    EXPECT_NEAR(fit.medium.binf[c], truth.medium.binf[c], 1e-6);
  }
  EXPECT_NEAR(fit.medium.b, truth.medium.b, 1e-6);
  EXPECT_LT(fit.final_loss, 1e-20);
}

TEST(Train, ZeroIterationsReturnsInitialization) {
  const SceneBundle b = generate_scene(tiny_spec());
  TrainConfig cfg;
  cfg.iterations = 0;
  cfg.n_points = 30;
  const TrainResult r = train(b, cfg, ClassifierWeights{});
  const GaussianCloud pts = points_from_depth(b.cameras, b.depth, cfg.n_points, cfg.raster.d_far);
  EXPECT_EQ(r.checkpoint.model, initial_model(pts, cfg));
  EXPECT_EQ(r.checkpoint.iteration, 0);
  EXPECT_TRUE(r.log.empty());
  EXPECT_FALSE(r.diverged);
}

TEST(Train, SeedPointsLieOnDepth) {
  const SceneBundle b = generate_scene(tiny_spec());
  const GaussianCloud pts = points_from_depth(b.cameras, b.depth, 25, 100.0);
  ASSERT_EQ(pts.size(), 25u);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 m = pts.get(i).mean;
    EXPECT_TRUE(std::isfinite(m[0]) && std::isfinite(m[1]) && std::isfinite(m[2]));
  }
}

TEST(Train, ShortRunIsDeterministicAndLearns) {
  const SceneBundle b = generate_scene(tiny_spec());
  TrainConfig cfg;
  cfg.iterations = 60;
  cfg.n_points = 40;
  cfg.eval_interval = 10;
  const TrainResult r1 = train(b, cfg, ClassifierWeights{});
  const TrainResult r2 = train(b, cfg, ClassifierWeights{});
  ASSERT_FALSE(r1.diverged);
  EXPECT_EQ(r1.checkpoint, r2.checkpoint);
  EXPECT_EQ(r1.totals, r2.totals);
  EXPECT_EQ(r1.checkpoint.iteration, 60);
  EXPECT_EQ(r1.log.size(), 7u);
  EXPECT_GT(r1.log.back().psnr, r1.log.front().psnr);
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.controller.enable_fraction = 1.5;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.n_points = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}
