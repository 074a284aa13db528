#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dpgs/adapt/water.hpp"
#include "dpgs/diff/gradcheck.hpp"
#include "dpgs/train/objective.hpp"

namespace dpgs {

struct GradcheckSettings {
  double step = 1e-4;
  double tolerance = 1e-4;
  int fixtures_per_op = 3;
  int max_seeds = 60;
  double min_kink_margin = 1e-3;
};

struct GradcheckSuiteResult {
  std::vector<GradReport> reports;
  std::vector<std::string> failures;  // "op: reason"

  bool passed() const { return failures.empty(); }
};

namespace detail {

inline Camera fixture_camera(int w, int h, double f) {
  Camera c;
  c.fx = c.fy = f;
  c.cx = (w - 1) / 2.0;
  c.cy = (h - 1) / 2.0;
  c.width = w;
  c.height = h;
  return c;
}

inline GaussianCloud fixture_cloud(std::size_t n, std::uint64_t seed, double spread) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1), pos(0, 1);
  GaussianCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    GaussianPrimitive g;
    g.mean = {spread * u(rng), spread * u(rng), 3.0 + pos(rng)};
    g.rotation = {1 + 0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng)};
    g.log_scale = {std::log(0.25 + 0.15 * pos(rng)), std::log(0.25 + 0.15 * pos(rng)), std::log(0.1 + 0.1 * pos(rng))};
    g.opacity = 0.5 + 1.5 * pos(rng);
    g.color = {0.2 + 0.6 * pos(rng), 0.2 + 0.6 * pos(rng), 0.2 + 0.6 * pos(rng)};
    c.push_back(g);
  }
  return c;
}

inline ScalarField fixture_depth(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  const double a = u(rng), b = u(rng), c = u(rng);
  ScalarField d(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) d.at(x, y) = 3.0 + 2.0 * a * x / w + b * std::sin(0.7 * y + c) + 0.3 * u(rng);
  return d;
}

template <int N>
Field<N> fixture_field(int w, int h, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Field<N> f(w, h);
  for (double& v : f.data()) v = u(rng);
  return f;
}

/// Network weights at O(1) scale so every slot carries a measurable gradient.
inline ScatterParams fixture_scatter(std::uint64_t seed) {
  ScatterParams p = ScatterParams::initialize(seed);
  std::mt19937_64 rng(seed + 1000);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (double& v : p.branch_w) v = u(rng);
  for (double& v : p.ca_w1) v = u(rng);
  for (double& v : p.ca_w2) v = u(rng);
  for (double& v : p.sa_w) v = u(rng);
  for (double& v : p.fuse_w) v = 3 * u(rng);
  for (double& v : p.branch_b) v = 0.5 * u(rng) + 0.2;
  for (double& v : p.ca_b1) v = 0.5 * u(rng) + 0.1;
  p.theta_b[0] = inverse_softplus(0.3);
  p.delta[0] = 0.5;
  p.lambda[0] = 0.4;
  return p;
}

template <int N>
double dot(const Field<N>& a, const Field<N>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline ScalarField depth_slot(const ParamVector& v, int w, int h) {
  const auto s = v.slot("depth");
  return ScalarField(w, h, std::vector<double>(s.begin(), s.end()));
}

/// A candidate fixture: its loss plus either a kink margin or a signature of
/// its discrete switch states (checked across the whole stencil).
struct Fixture {
  LossFn fn;
  ParamVector params;
  double margin = std::numeric_limits<double>::infinity();
  std::function<std::vector<int>(const ParamVector&)> signature;
};

/// True when no switch changes state at params +- step along any coordinate.
inline bool stencil_stable(const Fixture& fx, double step) {
  const std::vector<int> base = fx.signature(fx.params);
  ParamVector probe = fx.params;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double x0 = probe.data()[i];
    for (double d : {step, -step}) {
      probe.data()[i] = x0 + d;
      if (fx.signature(probe) != base) return false;
    }
    probe.data()[i] = x0;
  }
  return true;
}

}  // namespace detail

/// Runs `make(seed)` over seeds until `fixtures_per_op` admissible fixtures
/// (kink margin and finite-difference resolution) have been checked.
inline void run_op(GradcheckSuiteResult& out, const std::string& op,
                   const std::function<detail::Fixture(std::uint64_t)>& make, const GradcheckSettings& gs) {
  int accepted = 0;
  for (std::uint64_t seed = 1; accepted < gs.fixtures_per_op && seed <= static_cast<std::uint64_t>(gs.max_seeds);
       ++seed) {
    const detail::Fixture fx = make(seed);
    if (fx.margin < gs.min_kink_margin) continue;
    if (fx.signature && !stencil_stable(fx, gs.step)) continue;
    if (!well_conditioned(fx.fn, fx.params, gs.step)) continue;
    ++accepted;
    GradReport rep = grad_check(op, fx.fn, fx.params, gs.step);
    if (!rep.passed(gs.tolerance))
      out.failures.push_back(op + ": seed " + std::to_string(seed) + " " + rep.argmax_slot + "[" +
                             std::to_string(rep.argmax_index) + "] rel err " + std::to_string(rep.max_rel_error));
    out.reports.push_back(std::move(rep));
  }
  if (accepted < gs.fixtures_per_op)
    out.failures.push_back(op + ": only " + std::to_string(accepted) + " admissible fixtures");
}

/// Loss weights with a single active term (`term` in 1..5), or the defaults
/// for term 0.
inline LossWeights isolated_weights(int term) {
  LossWeights lw;
  if (term == 0) return lw;
  lw.w1 = lw.w2 = lw.w3 = lw.w4 = lw.w5 = 0;
  double* ws[] = {&lw.w1, &lw.w2, &lw.w3, &lw.w4, &lw.w5};
  *ws[term - 1] = 1;
  return lw;
}

/// Finite-difference check of every differentiable operator: the renderer,
/// both physics maps and the depth network, every loss term through the full
/// pipeline, and the water classifier.
inline GradcheckSuiteResult run_gradcheck_suite(const GradcheckSettings& gs = {}) {
  using namespace detail;
  GradcheckSuiteResult out;
  const RasterSettings rs;

  run_op(out, "rasterize", [&](std::uint64_t seed) {
    const Camera cam = fixture_camera(8, 8, 9.0);
    const GaussianCloud cloud = fixture_cloud(2, seed + 10, 0.15);
    const auto rc = fixture_field<3>(8, 8, seed * 7, -1, 1);
    const auto rd = fixture_field<1>(8, 8, seed * 7 + 1, -0.1, 0.1);
    const auto ra = fixture_field<1>(8, 8, seed * 7 + 2, -1, 1);
    Fixture fx;
    fx.params = pack(cloud);
    fx.margin = raster_margin(cloud, cam, rs);
    fx.fn = [=](const ParamVector& x, const ParamVector&, ParamVector* g) {
      GaussianCloud c = cloud;
      unpack(x, c);
      const auto r = rasterize(c, cam, rs);
      if (g) *g = pack(rasterize_backward(c, cam, rs, rc, rd, ra));
      return dot(r.color, rc) + dot(r.depth, rd) + dot(r.alpha, ra);
    };
    return fx;
  }, gs);

  run_op(out, "attenuation_map", [&](std::uint64_t seed) {
    const ScalarField d0 = fixture_depth(6, 5, seed);
    const auto e = fixture_field<1>(6, 5, seed + 10, 0, 1);
    const auto ca = fixture_field<3>(6, 5, seed + 20, -1, 1);
    AttenuationParams p0 = AttenuationParams::ocean_default();
    p0.w = {0.9, 1.1, 1.0};
    Fixture fx;
    fx.params = pack(p0);
    fx.params.add("depth", d0.data());
    fx.fn = [=](const ParamVector& v, const ParamVector&, ParamVector* g) {
      AttenuationParams p = p0;
      unpack(v, p);
      const ScalarField d = depth_slot(v, 6, 5);
      const auto a = attenuation_map(d, e, p, 1.1);
      if (g) {
        const auto gr = attenuation_map_backward(d, e, p, 1.1, a, ca);
        *g = pack(gr.params);
        g->add("depth", gr.depth.data());
      }
      return dot(a, ca);
    };
    return fx;
  }, gs);

  run_op(out, "multiscale_features", [&](std::uint64_t seed) {
    const int w = 12, h = 10;
    const ScatterParams p0 = fixture_scatter(seed);
    const ScalarField d0 = fixture_depth(w, h, seed);
    const auto cm = fixture_field<1>(w, h, seed + 9, -1, 1);
    Fixture fx;
    MultiscaleCache probe;
    multiscale_features(d0, p0, &probe);
    fx.margin = kink_margin(probe);
    fx.params = pack(p0);
    fx.params.add("depth", d0.data());
    fx.fn = [=](const ParamVector& v, const ParamVector&, ParamVector* g) {
      ScatterParams p = p0;
      unpack(v, p);
      const ScalarField d = depth_slot(v, w, h);
      MultiscaleCache cache;
      const auto m = multiscale_features(d, p, &cache);
      if (g) {
        const auto gr = multiscale_features_backward(d, p, cache, cm);
        *g = pack(gr.params);
        g->add("depth", gr.depth.data());
      }
      return dot(m, cm);
    };
    return fx;
  }, gs);

  run_op(out, "scattering_map", [&](std::uint64_t seed) {
    const int w = 8, h = 8;
    const ScatterParams p0 = fixture_scatter(seed * 31);
    const ScalarField d0 = fixture_depth(w, h, seed);
    const ScalarField edge = depth_edge(d0);
    const auto cb = fixture_field<3>(w, h, seed + 5, 0.5, 1.5);
    const auto cs = fixture_field<1>(w, h, seed + 6, 0.5, 1.5);
    ScatterOptions opt;
    opt.sigma_c = 2.0;
    Fixture fx;
    MultiscaleCache probe;
    multiscale_features(d0, p0, &probe);
    fx.margin = kink_margin(probe);
    fx.params = pack(p0);
    fx.params.add("depth", d0.data());
    fx.fn = [=](const ParamVector& v, const ParamVector&, ParamVector* g) {
      ScatterParams p = p0;
      unpack(v, p);
      const ScalarField d = depth_slot(v, w, h);
      const auto r = scattering_map(d, p, opt, &edge);
      if (g) {
        const auto gr = scattering_map_backward(d, p, opt, r, cb, cs);
        *g = pack(gr.params);
        g->add("depth", gr.depth.data());
      }
      return dot(r.b, cb) + dot(r.bs, cs);
    };
    return fx;
  }, gs);

  // Each loss term alone through render -> physics -> composite, then all together.
  const char* names[] = {"l_total", "l_basic", "l_ab", "l_wat", "l_edge", "l_ms"};
  for (int term = 0; term <= 5; ++term) {
    run_op(out, names[term], [&](std::uint64_t seed) {
      const Camera cam = fixture_camera(8, 8, 9.0);
      Model m0;
      // Three wide splats covering the frame, so no pixel sits on the background.
      m0.gaussians = fixture_cloud(3, seed + 100, 0.3);
      for (std::size_t i = 0; i < m0.gaussians.size(); ++i) {
        GaussianPrimitive g = m0.gaussians.get(i);
        g.log_scale[0] += std::log(2.5);
        g.log_scale[1] += std::log(2.5);
        m0.gaussians.set(i, g);
      }
      m0.atten.w = {0.9, 1.1, 1.0};
      m0.atten.gamma[0] = 0.4;
      m0.scatter = fixture_scatter(seed + 200);
      ObjectiveSettings s;
      s.weights = isolated_weights(term);
      s.scatter.sigma_c = 2.0;
      s.water_index = 0.3;
      s.t_mod = 1.05;
      // Target offset from the composite by a signed amount so no L1 term sits at a kink.
      ColorField target = evaluate_objective(m0, m0, cam, ColorField(8, 8, 0.5), s).composite;
      {
        std::mt19937_64 rng(seed + 300);
        std::uniform_real_distribution<double> mag(0.03, 0.1);
        std::bernoulli_distribution flip(0.3);
        for (double& v : target.data()) v += (flip(rng) ? -1 : 1) * mag(rng);
      }
      Fixture fx;
      fx.params = pack(m0);
      fx.signature = [=](const ParamVector& v) {
        Model m = m0;
        unpack(v, m);
        return objective_signature(m, m0, cam, target, s);
      };
      fx.fn = [=](const ParamVector& v, const ParamVector& anchor, ParamVector* g) {
        Model m = m0, ma = m0;
        unpack(v, m);
        unpack(anchor, ma);
        Model grad;
        const bool same = &v == &anchor || v == anchor;
        const ObjectiveResult r = same ? evaluate_objective(m, m, cam, target, s, g ? &grad : nullptr)
                                       : evaluate_objective(m, ma, cam, target, s, g ? &grad : nullptr);
        if (g) *g = pack(grad);
        return r.parts.total;
      };
      return fx;
    }, gs);
  }

  run_op(out, "classifier", [&](std::uint64_t seed) {
    const ClassifierWeights w0 = ClassifierWeights::random(seed);
    std::mt19937_64 rng(seed + 77);
    std::uniform_real_distribution<double> u(0.05, 0.6);
    std::vector<std::array<double, 3>> xs(6);
    for (auto& x : xs) x = {u(rng), u(rng), u(rng)};
    Fixture fx;
    for (const auto& x : xs) {
      ClassifierCache c;
      classifier_forward(x, w0, &c);
      for (double p : c.pre) fx.margin = std::min(fx.margin, std::abs(p));
    }
    fx.params = pack(w0);
    fx.fn = [=](const ParamVector& v, const ParamVector&, ParamVector* g) {
      ClassifierWeights w = w0;
      unpack(v, w);
      if (g) *g = v.zeros_like();
      double loss = 0;
      for (std::size_t n = 0; n < xs.size(); ++n) {
        ClassifierCache c;
        const auto probs = classifier_forward(xs[n], w, &c);
        const std::size_t label = n % kWaterClasses;
        loss -= std::log(probs[label]);
        if (g) {
          std::array<double, kWaterClasses> gp{};
          gp[label] = -1.0 / probs[label];
          accumulate_into(*g, classifier_backward(w, c, gp).weights);
        }
      }
      return loss;
    };
    return fx;
  }, gs);

  return out;
}

}  // namespace dpgs
