#pragma once

#include <algorithm>
#include <array>
#include <utility>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dpgs/adapt/water.hpp"
#include "dpgs/physics/attenuation.hpp"
#include "dpgs/physics/scattering.hpp"
#include "dpgs/synth/scene.hpp"

namespace dpgs {

struct RestoreResult {
  ColorField j_hat;
  std::vector<std::uint8_t> valid;  // per pixel; 0 where some channel had A <= a_min
};

/// J_hat = clamp((I - B) / max(A, a_min), 0, 1) with A, B from the learned
/// physics at depth D.
inline RestoreResult restore(const ColorField& image, const ScalarField& depth, const AttenuationParams& atten,
                             const ScatterParams& scat, const WaterProfile& profile,
                             const ScatterOptions& opt = {}, double a_min = 1e-3) {
  require_same_dims(image, depth, "restore");
  const ColorField a = attenuation_map(depth, edge_factor(image, depth), atten, profile.t_mod());
  const ScatterResult sc = scattering_map(depth, scat, opt);
  RestoreResult r{ColorField(image.width(), image.height()), std::vector<std::uint8_t>(depth.size(), 1)};
  for (std::size_t i = 0; i < depth.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      const std::size_t k = 3 * i + c;
      if (a[k] <= a_min) r.valid[i] = 0;
      r.j_hat[k] = std::clamp((image[k] - sc.b[k]) / std::max(a[k], a_min), 0.0, 1.0);
    }
  return r;
}

/// Settings that reduce the learned physics to the plain two-coefficient
/// image formation model (no edge, confidence or multi-scale modulation).
inline ScatterOptions neutral_scatter_options() {
  ScatterOptions o;
  o.sigma_c = std::numeric_limits<double>::infinity();
  o.multiscale = false;
  return o;
}

inline WaterProfile neutral_profile() {
  WaterProfile p;
  p.probs = {1, 0, 0};  // t_mod = 1
  p.w = 0;
  return p;
}

struct PhysicsFit {
  AttenuationParams atten;
  ScatterParams scatter;
  MediumParams medium;  // effective beta, b, B_inf
  double final_loss = 0;
};

struct PhysicsFitConfig {
  int max_iterations = 200;
  double tolerance = 1e-14;  // stop when the relative loss decrease falls below this
};

namespace detail {

/// Solves the symmetric positive definite system a x = b in place (Cholesky).
template <std::size_t N>
bool cholesky_solve(std::array<std::array<double, N>, N> a, std::array<double, N>& b) {
  for (std::size_t j = 0; j < N; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j][k] * a[j][k];
    if (!(d > 0)) return false;
    a[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < N; ++i) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
      a[i][j] = s / a[j][j];
    }
  }
  for (std::size_t i = 0; i < N; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i][k] * b[k];
    b[i] = s / a[i][i];
  }
  for (std::size_t i = N; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < N; ++k) s -= a[k][i] * b[k];
    b[i] = s / a[i][i];
  }
  return true;
}

}  // namespace detail

/// Fits attenuation and backscatter coefficients with the renderer frozen:
/// Levenberg-Marquardt on the masked squared error between J * A(D) + B(D)
/// and I over unclamped pixels, under neutral modulators. Unknowns are the
/// unconstrained parameters (theta_beta[3], binf_raw[3], theta_b).
inline PhysicsFit fit_physics(const std::vector<ColorField>& clean, const std::vector<ScalarField>& depth,
                              const std::vector<ColorField>& observed, const PhysicsFitConfig& cfg = {}) {
  if (clean.empty() || clean.size() != depth.size() || clean.size() != observed.size())
    throw InvalidArgument("fit_physics: need matching clean/depth/observed views");
  for (std::size_t v = 0; v < clean.size(); ++v) {
    require_same_dims(clean[v], depth[v], "fit_physics");
    require_same_dims(observed[v], depth[v], "fit_physics");
  }
  constexpr std::size_t N = 7;
  using Vec = std::array<double, N>;
  using Mat = std::array<Vec, N>;
  Vec x{};
  for (int c = 0; c < 3; ++c) {
    x[c] = inverse_softplus(0.2);
    x[3 + c] = logit(0.5);
  }
  x[6] = inverse_softplus(0.1);

  // Normal equations at x; returns the loss (mean over valid values).
  auto accumulate = [&](const Vec& p, Mat* jtj, Vec* jtr) {
    double loss = 0;
    std::size_t n = 0;
    const double b = softplus(p[6]), db = sigmoid(p[6]);
    for (std::size_t v = 0; v < clean.size(); ++v)
      for (std::size_t i = 0; i < depth[v].size(); ++i) {
        const double d = depth[v][i], eb = std::exp(-b * d);
        for (int c = 0; c < 3; ++c) {
          const std::size_t k = 3 * i + c;
          const double obs = observed[v][k];
          if (!(obs > 0 && obs < 1)) continue;
          const double beta = softplus(p[c]), binf = sigmoid(p[3 + c]);
          const double ea = std::exp(-beta * d);
          const double r = clean[v][k] * ea + binf * (1 - eb) - obs;
          loss += r * r;
          ++n;
          if (!jtj) continue;
          std::array<std::pair<std::size_t, double>, 3> jac{{{static_cast<std::size_t>(c), -clean[v][k] * ea * d * sigmoid(p[c])},
                                                             {3u + c, (1 - eb) * binf * (1 - binf)},
                                                             {6u, binf * eb * d * db}}};
          for (const auto& [a, ja] : jac) {
            (*jtr)[a] += ja * r;
            for (const auto& [bb, jb] : jac) (*jtj)[a][bb] += ja * jb;
          }
        }
      }
    if (n == 0) throw InvalidArgument("fit_physics: every observed value is clamped");
    return loss / static_cast<double>(n);
  };

  PhysicsFit fit;
  double mu = 1e-3;
  Mat jtj{};
  Vec jtr{};
  double loss = accumulate(x, &jtj, &jtr);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    bool improved = false;
    for (int tries = 0; tries < 30 && !improved; ++tries) {
      Mat a = jtj;
      Vec step = jtr;
      for (std::size_t i = 0; i < N; ++i) a[i][i] += mu * std::max(jtj[i][i], 1e-12);
      if (!detail::cholesky_solve(a, step)) {
        mu *= 10;
        continue;
      }
      Vec trial = x;
      for (std::size_t i = 0; i < N; ++i) trial[i] -= step[i];
      const double l = accumulate(trial, nullptr, nullptr);
      if (std::isfinite(l) && l < loss) {
        const double rel = (loss - l) / std::max(loss, 1e-300);
        x = trial;
        loss = l;
        mu = std::max(mu / 10, 1e-12);
        improved = true;
        if (rel < cfg.tolerance) it = cfg.max_iterations;
      } else {
        mu *= 10;
      }
    }
    if (!improved) break;
    jtj = {};
    jtr = {};
    loss = accumulate(x, &jtj, &jtr);
  }

  fit.atten.w = {1, 1, 1};
  fit.atten.gamma[0] = 0;
  fit.scatter = ScatterParams::zeros();
  for (int c = 0; c < 3; ++c) {
    fit.atten.theta_beta[c] = x[c];
    fit.scatter.binf_raw[c] = x[3 + c];
  }
  fit.scatter.theta_b[0] = x[6];
  const auto beta = fit.atten.beta();
  const auto binf = fit.scatter.binf();
  fit.medium.beta = {beta[0], beta[1], beta[2]};
  fit.medium.b = fit.scatter.b();
  fit.medium.binf = {binf[0], binf[1], binf[2]};
  fit.final_loss = loss;
  return fit;
}

}  // namespace dpgs
