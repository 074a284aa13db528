#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>

#include "dpgs/core/field.hpp"
#include "dpgs/core/filter.hpp"
#include "dpgs/core/math.hpp"

namespace dpgs {

/// Learnable parameters of the wavelength-selective attenuation map.
struct AttenuationParams {
  std::array<double, 3> w{1.0, 1.0, 1.0};  ///< per-channel weights, >= 0
  std::array<double, 3> theta_beta{};      ///< beta_c = softplus(theta_beta_c)
  std::array<double, 1> gamma{0.5};        ///< edge modulation strength in [0, 1]

  /// Default ocean-like ordering beta_r > beta_g > beta_b.
  static AttenuationParams ocean_default() {
    AttenuationParams p;
    p.theta_beta = {inverse_softplus(0.30), inverse_softplus(0.12), inverse_softplus(0.07)};
    return p;
  }

  std::array<double, 3> beta() const {
    return {softplus(theta_beta[0]), softplus(theta_beta[1]), softplus(theta_beta[2])};
  }

  void project_constraints() {
    for (double& v : w) v = std::max(v, 0.0);
    gamma[0] = std::clamp(gamma[0], 0.0, 1.0);
  }

  template <class Fn>
  friend void visit_slots(AttenuationParams& p, Fn&& fn) {
    fn("atten.gamma", std::span<double>(p.gamma));
    fn("atten.theta_beta", std::span<double>(p.theta_beta));
    fn("atten.w", std::span<double>(p.w));
  }

  bool operator==(const AttenuationParams&) const = default;
};

inline constexpr double kEdgeEps = 1e-6;

/// Normalizes a nonnegative magnitude by its 95th percentile and clamps to [0, 1].
inline ScalarField normalize_by_p95(ScalarField g) {
  const double p95 = quantile(g.data(), 0.95);
  for (double& v : g.data()) v = std::clamp(v / (p95 + kEdgeEps), 0.0, 1.0);
  return g;
}

/// Edge perception factor: strongest of luminance and depth Sobel responses,
/// percentile-normalized into [0, 1].
inline ScalarField edge_factor(const ColorField& image, const ScalarField& depth) {
  require_same_dims(image, depth, "edge_factor");
  ScalarField gi = sobel_magnitude(luma(image));
  const ScalarField gd = sobel_magnitude(depth);
  for (std::size_t i = 0; i < gi.size(); ++i) gi[i] = std::max(gi[i], gd[i]);
  return normalize_by_p95(std::move(gi));
}

/// A_c = exp(-w_c * beta_c * (1 - gamma * E) * t_mod * D) with a precomputed
/// (gradient-stopped) edge field E.
inline ColorField attenuation_map(const ScalarField& depth, const ScalarField& edge,
                                  const AttenuationParams& p, double t_mod) {
  require_same_dims(depth, edge, "attenuation_map");
  if (!(t_mod > 0 && t_mod <= 2)) throw InvalidArgument("attenuation_map: t_mod must be in (0, 2]");
  const auto beta = p.beta();
  const double gamma = p.gamma[0];
  ColorField a(depth.width(), depth.height());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth[i] < 0) throw InvalidArgument("attenuation_map: negative depth");
    const double k = (1.0 - gamma * edge[i]) * t_mod * depth[i];
    for (int c = 0; c < 3; ++c) a[3 * i + c] = std::exp(-p.w[c] * beta[c] * k);
  }
  return a;
}

/// Convenience overload computing the edge factor from the guiding image.
inline ColorField attenuation_map(const ScalarField& depth, const ColorField& image,
                                  const AttenuationParams& p, double t_mod) {
  return attenuation_map(depth, edge_factor(image, depth), p, t_mod);
}

struct AttenuationGrad {
  ScalarField depth;
  AttenuationParams params{{0, 0, 0}, {0, 0, 0}, {0}};
};

/// Vector-Jacobian product of attenuation_map given dL/dA.
inline AttenuationGrad attenuation_map_backward(const ScalarField& depth, const ScalarField& edge,
                                                const AttenuationParams& p, double t_mod,
                                                const ColorField& a, const ColorField& g_a) {
  const auto beta = p.beta();
  const double gamma = p.gamma[0];
  AttenuationGrad out{ScalarField(depth.width(), depth.height())};
  std::array<double, 3> gw{}, gbeta{};
  double ggamma = 0;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double m = 1.0 - gamma * edge[i];
    const double k = m * t_mod * depth[i];
    double gk = 0;
    for (int c = 0; c < 3; ++c) {
      // d/d(exponent) of exp(-x) is -A
      const double ge = -g_a[3 * i + c] * a[3 * i + c];
      gw[c] += ge * beta[c] * k;
      gbeta[c] += ge * p.w[c] * k;
      gk += ge * p.w[c] * beta[c];
    }
    out.depth[i] = gk * m * t_mod;
    ggamma += gk * (-edge[i]) * t_mod * depth[i];
  }
  for (int c = 0; c < 3; ++c) {
    out.params.w[c] = gw[c];
    out.params.theta_beta[c] = gbeta[c] * sigmoid(p.theta_beta[c]);  // softplus' = sigmoid
  }
  out.params.gamma[0] = ggamma;
  return out;
}

}  // namespace dpgs
