#pragma once

#include <array>
#include <cmath>
#include <optional>

#include "dpgs/render/gaussian.hpp"

namespace dpgs {

/// Symmetric 2x2 covariance [[xx, xy], [xy, yy]].
struct Cov2 {
  double xx = 0, xy = 0, yy = 0;
  double det() const { return xx * yy - xy * xy; }
  bool spd() const { return xx > 0 && det() > 0; }
  /// Largest eigenvalue.
  double max_eigen() const {
    const double mid = 0.5 * (xx + yy);
    return mid + std::sqrt(std::max(mid * mid - det(), 0.0));
  }
};

struct ProjectionSettings {
  double eps_cov = 1e-6;
  double z_near = 0.01;
};

/// Screen-space footprint of one Gaussian.
struct Projection {
  Vec2 mean2d{};
  Cov2 cov2d;
  double depth = 0;  ///< camera-space z
  Vec3 cam_point{};
  std::array<double, 6> jw{};  ///< 2x3 product of the perspective Jacobian and view rotation
  Mat3 sigma3{};               ///< world covariance R S^2 R^T
};

/// World covariance R S^2 R^T.
inline Mat3 world_covariance(const GaussianPrimitive& g) {
  const Mat3 r = quat_to_rotation(g.rotation);
  const Vec3 s = g.scale();
  Mat3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i * 3 + j] = r[i * 3 + j] * s[j];
  return mat_mul(m, transpose(m));
}

/// Pinhole projection with the first-order (EWA) covariance transform.
/// Returns nullopt when the Gaussian is culled (behind z_near or degenerate).
inline std::optional<Projection> project_gaussian(const GaussianPrimitive& g, const Camera& cam,
                                                  const ProjectionSettings& s = {}) {
  Projection p;
  p.cam_point = cam.to_camera(g.mean);
  const double x = p.cam_point[0], y = p.cam_point[1], z = p.cam_point[2];
  if (!(z > s.z_near)) return std::nullopt;
  p.depth = z;
  p.mean2d = {cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy};
  const double j00 = cam.fx / z, j02 = -cam.fx * x / (z * z);
  const double j11 = cam.fy / z, j12 = -cam.fy * y / (z * z);
  const Mat3& w = cam.rotation;
  for (int k = 0; k < 3; ++k) {
    p.jw[k] = j00 * w[k] + j02 * w[6 + k];
    p.jw[3 + k] = j11 * w[3 + k] + j12 * w[6 + k];
  }
  p.sigma3 = world_covariance(g);
  std::array<double, 6> t{};  // jw * sigma3
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) t[r * 3 + c] += p.jw[r * 3 + k] * p.sigma3[k * 3 + c];
  auto entry = [&](int r, int c) {
    return t[r * 3] * p.jw[c * 3] + t[r * 3 + 1] * p.jw[c * 3 + 1] + t[r * 3 + 2] * p.jw[c * 3 + 2];
  };
  p.cov2d = {entry(0, 0) + s.eps_cov, entry(0, 1), entry(1, 1) + s.eps_cov};
  if (!p.cov2d.spd()) return std::nullopt;
  return p;
}

/// Unnormalized 2D Gaussian exp(-1/2 d^T cov^-1 d), equal to 1 at the mean.
inline double eval_gaussian_2d(const Vec2& mean2d, const Cov2& cov, const Vec2& x) {
  if (!cov.spd()) throw InvalidArgument("eval_gaussian_2d: covariance not positive definite");
  const double det = cov.det();
  const double dx = x[0] - mean2d[0], dy = x[1] - mean2d[1];
  const double q = (cov.yy * dx * dx - 2 * cov.xy * dx * dy + cov.xx * dy * dy) / det;
  return std::exp(-0.5 * q);
}

/// Pulls gradients on (mean2d, cov2d, depth) back to the Gaussian's attributes.
/// `g_cov` holds dL/dcov as a full symmetric matrix (off-diagonal once per entry).
inline GaussianPrimitive project_gaussian_vjp(const GaussianPrimitive& g, const Camera& cam,
                                              const Projection& p, const Vec2& g_mean2d,
                                              const Cov2& g_cov, double g_depth) {
  const double x = p.cam_point[0], y = p.cam_point[1], z = p.cam_point[2];
  double gx = g_mean2d[0] * cam.fx / z;
  double gy = g_mean2d[1] * cam.fy / z;
  double gz = g_depth - g_mean2d[0] * cam.fx * x / (z * z) - g_mean2d[1] * cam.fy * y / (z * z);

  const double G[4] = {g_cov.xx, g_cov.xy, g_cov.xy, g_cov.yy};
  // d/d(JW) = 2 G (JW) Sigma3
  std::array<double, 6> ga_pre{};  // G * jw
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) ga_pre[r * 3 + c] = G[r * 2] * p.jw[c] + G[r * 2 + 1] * p.jw[3 + c];
  std::array<double, 6> g_jw{};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) g_jw[r * 3 + c] += 2 * ga_pre[r * 3 + k] * p.sigma3[k * 3 + c];
  // JW = J * W  ->  dJ = dJW * W^T
  const Mat3& w = cam.rotation;
  auto g_j = [&](int r, int c) {
    return g_jw[r * 3] * w[c * 3] + g_jw[r * 3 + 1] * w[c * 3 + 1] + g_jw[r * 3 + 2] * w[c * 3 + 2];
  };
  const double gj00 = g_j(0, 0), gj02 = g_j(0, 2), gj11 = g_j(1, 1), gj12 = g_j(1, 2);
  const double z2 = z * z, z3 = z2 * z;
  gz += -gj00 * cam.fx / z2 + gj02 * 2 * cam.fx * x / z3 - gj11 * cam.fy / z2 +
        gj12 * 2 * cam.fy * y / z3;
  gx += -gj02 * cam.fx / z2;
  gy += -gj12 * cam.fy / z2;

  GaussianPrimitive out;
  out.rotation = {0, 0, 0, 0};
  out.mean = mat_t_vec(cam.rotation, {gx, gy, gz});

  // dSigma3 = (JW)^T G (JW)
  Mat3 g_sigma{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      g_sigma[i * 3 + j] = p.jw[i] * ga_pre[j] + p.jw[3 + i] * ga_pre[3 + j];
  // Sigma3 = M M^T with M = R S
  const Mat3 r = quat_to_rotation(g.rotation);
  const Vec3 s = g.scale();
  Mat3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i * 3 + j] = r[i * 3 + j] * s[j];
  const Mat3 g_sym = {g_sigma[0], 0.5 * (g_sigma[1] + g_sigma[3]), 0.5 * (g_sigma[2] + g_sigma[6]),
                      0.5 * (g_sigma[1] + g_sigma[3]), g_sigma[4], 0.5 * (g_sigma[5] + g_sigma[7]),
                      0.5 * (g_sigma[2] + g_sigma[6]), 0.5 * (g_sigma[5] + g_sigma[7]), g_sigma[8]};
  const Mat3 g_m_half = mat_mul(g_sym, m);
  Mat3 g_r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double gm = 2 * g_m_half[i * 3 + j];
      g_r[i * 3 + j] = gm * s[j];
      out.log_scale[j] += gm * r[i * 3 + j] * s[j];
    }
  out.rotation = quat_rotation_vjp(g.rotation, g_r);
  return out;
}

}  // namespace dpgs
