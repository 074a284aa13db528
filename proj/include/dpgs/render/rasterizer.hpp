#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "dpgs/core/field.hpp"
#include "dpgs/core/parallel.hpp"
#include "dpgs/render/projection.hpp"

namespace dpgs {

struct RasterSettings {
  ProjectionSettings projection{};
  double w_cut = 1.0 / 255.0;  ///< per-pixel weight cutoff, shared by forward and backward
  double alpha_min = 0.05;     ///< below this accumulated alpha, depth falls back to d_far
  double d_far = 20.0;
  double eps_depth = 1e-8;
};

/// Medium-free radiance, accumulated alpha and expected depth.
struct RenderOutput {
  ColorField color;
  ScalarField depth;
  ScalarField alpha;
};

namespace detail {

inline constexpr int kRowsPerBlock = 8;

struct Splat {
  std::size_t index = 0;
  Projection proj;
  double det = 1;
  double opacity = 0;  // sigmoid(logit)
  Vec3 color{};
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // inclusive pixel bounds
};

struct Prepared {
  std::vector<Splat> splats;                 // depth-sorted
  std::vector<std::vector<int>> block_lists;  // per row block, indices into splats in depth order
  std::size_t culled = 0;
};

inline Prepared prepare(const GaussianCloud& cloud, const Camera& cam, const RasterSettings& s) {
  Prepared out;
  const double support = std::sqrt(2.0 * std::log(1.0 / s.w_cut));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const GaussianPrimitive g = cloud.get(i);
    auto p = project_gaussian(g, cam, s.projection);
    if (!p) {
      ++out.culled;
      continue;
    }
    Splat sp;
    sp.index = i;
    sp.proj = *p;
    sp.det = p->cov2d.det();
    sp.opacity = g.alpha();
    sp.color = g.color;
    // Outside this box the Mahalanobis radius exceeds the cutoff radius.
    const double r = support * std::sqrt(p->cov2d.max_eigen());
    sp.x0 = std::max(0, static_cast<int>(std::floor(p->mean2d[0] - r)));
    sp.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(p->mean2d[0] + r)));
    sp.y0 = std::max(0, static_cast<int>(std::floor(p->mean2d[1] - r)));
    sp.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(p->mean2d[1] + r)));
    if (sp.x0 > sp.x1 || sp.y0 > sp.y1) continue;
    out.splats.push_back(sp);
  }
  std::stable_sort(out.splats.begin(), out.splats.end(),
                   [](const Splat& a, const Splat& b) { return a.proj.depth < b.proj.depth; });
  const int blocks = (cam.height + kRowsPerBlock - 1) / kRowsPerBlock;
  out.block_lists.resize(blocks);
  for (int k = 0; k < static_cast<int>(out.splats.size()); ++k) {
    const auto& sp = out.splats[k];
    for (int b = sp.y0 / kRowsPerBlock; b <= sp.y1 / kRowsPerBlock; ++b) out.block_lists[b].push_back(k);
  }
  return out;
}

// Weight of a splat at pixel (x, y), or 0 when under the cutoff. Also returns
// u = cov^-1 (x - mean) for the backward pass.
inline double splat_weight(const Splat& sp, double x, double y, double w_cut, Vec2* u = nullptr) {
  const double dx = x - sp.proj.mean2d[0], dy = y - sp.proj.mean2d[1];
  const Cov2& c = sp.proj.cov2d;
  const double ux = (c.yy * dx - c.xy * dy) / sp.det;
  const double uy = (-c.xy * dx + c.xx * dy) / sp.det;
  const double w = std::exp(-0.5 * (dx * ux + dy * uy));
  if (w < w_cut) return 0.0;
  if (u) *u = {ux, uy};
  return w;
}

struct Contribution {
  int splat;
  double w, a, transmittance;
  Vec2 u;
};

}  // namespace detail

/// Front-to-back alpha compositing of depth-sorted splats over a black
/// background.
inline RenderOutput rasterize(const GaussianCloud& cloud, const Camera& cam,
                              const RasterSettings& s = {}) {
  cam.validate();
  const auto prep = detail::prepare(cloud, cam, s);
  RenderOutput out{ColorField(cam.width, cam.height), ScalarField(cam.width, cam.height, s.d_far),
                   ScalarField(cam.width, cam.height)};
  parallel_for(prep.block_lists.size(), [&](std::size_t b) {
    const auto& list = prep.block_lists[b];
    const int y_end = std::min(cam.height, static_cast<int>(b + 1) * detail::kRowsPerBlock);
    for (int y = static_cast<int>(b) * detail::kRowsPerBlock; y < y_end; ++y)
      for (int x = 0; x < cam.width; ++x) {
        double t = 1.0, acc_a = 0.0, acc_z = 0.0;
        Vec3 acc_c{};
        for (int k : list) {
          const auto& sp = prep.splats[k];
          if (x < sp.x0 || x > sp.x1 || y < sp.y0 || y > sp.y1) continue;
          const double w = detail::splat_weight(sp, x, y, s.w_cut);
          if (w == 0.0) continue;
          const double a = sp.opacity * w;
          const double at = a * t;
          for (int c = 0; c < 3; ++c) acc_c[c] += sp.color[c] * at;
          acc_a += at;
          acc_z += sp.proj.depth * at;
          t *= 1.0 - a;
        }
        for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = acc_c[c];
        out.alpha.at(x, y) = acc_a;
        if (acc_a >= s.alpha_min) out.depth.at(x, y) = acc_z / std::max(acc_a, s.eps_depth);
      }
  });
  return out;
}

/// Gradient of a scalar loss with respect to every Gaussian attribute, given
/// the loss gradients on the three render outputs. Recomputes the per-pixel
/// compositing order; accumulation is per row block, merged in block order.
inline GaussianCloud rasterize_backward(const GaussianCloud& cloud, const Camera& cam,
                                        const RasterSettings& s, const ColorField& g_color,
                                        const ScalarField& g_depth, const ScalarField& g_alpha) {
  const auto prep = detail::prepare(cloud, cam, s);
  const std::size_t n = prep.splats.size();
  // Per splat: mean2d(2), cov(3), depth, opacity-logit, color(3).
  constexpr int kStride = 10;
  std::vector<std::vector<double>> block_acc(prep.block_lists.size());
  parallel_for(prep.block_lists.size(), [&](std::size_t b) {
    auto& acc = block_acc[b];
    acc.assign(n * kStride, 0.0);
    const auto& list = prep.block_lists[b];
    std::vector<detail::Contribution> contrib;
    const int y_end = std::min(cam.height, static_cast<int>(b + 1) * detail::kRowsPerBlock);
    for (int y = static_cast<int>(b) * detail::kRowsPerBlock; y < y_end; ++y)
      for (int x = 0; x < cam.width; ++x) {
        contrib.clear();
        double t = 1.0, acc_a = 0.0, acc_z = 0.0;
        for (int k : list) {
          const auto& sp = prep.splats[k];
          if (x < sp.x0 || x > sp.x1 || y < sp.y0 || y > sp.y1) continue;
          Vec2 u{};
          const double w = detail::splat_weight(sp, x, y, s.w_cut, &u);
          if (w == 0.0) continue;
          const double a = sp.opacity * w;
          contrib.push_back({k, w, a, t, u});
          acc_a += a * t;
          acc_z += sp.proj.depth * a * t;
          t *= 1.0 - a;
        }
        if (contrib.empty()) continue;
        const double gz_px = g_depth.at(x, y);
        double g_num = 0.0, g_a = g_alpha.at(x, y);
        if (acc_a >= s.alpha_min) {
          const double denom = std::max(acc_a, s.eps_depth);
          g_num = gz_px / denom;
          if (acc_a > s.eps_depth) g_a -= gz_px * acc_z / (denom * denom);
        }
        const Vec3 gc{g_color.at(x, y, 0), g_color.at(x, y, 1), g_color.at(x, y, 2)};
        // Backward recursion: R_{i-1} = s_i a_i + (1 - a_i) R_i.
        double rest = 0.0;
        for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
          const auto& sp = prep.splats[it->splat];
          const double s_i = gc[0] * sp.color[0] + gc[1] * sp.color[1] + gc[2] * sp.color[2] + g_a +
                             g_num * sp.proj.depth;
          const double d_a = it->transmittance * (s_i - rest);
          rest = s_i * it->a + (1.0 - it->a) * rest;
          const double at = it->a * it->transmittance;
          double* g = &acc[static_cast<std::size_t>(it->splat) * kStride];
          for (int c = 0; c < 3; ++c) g[7 + c] += gc[c] * at;
          g[5] += g_num * at;
          g[6] += d_a * it->w;  // d/d(opacity); logit chain applied later
          const double g_q = -0.5 * it->w * d_a * sp.opacity;  // dL/d(quadratic form)
          g[0] += -2.0 * g_q * it->u[0];
          g[1] += -2.0 * g_q * it->u[1];
          g[2] += -g_q * it->u[0] * it->u[0];
          g[3] += -g_q * it->u[0] * it->u[1];
          g[4] += -g_q * it->u[1] * it->u[1];
        }
      }
  });
  std::vector<double> total(n * kStride, 0.0);
  for (const auto& acc : block_acc)
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += acc[i];

  GaussianCloud grad(cloud.size());
  {
    // Zero the identity-quaternion fill of the constructor.
    GaussianPrimitive zero;
    zero.rotation = {0, 0, 0, 0};
    for (std::size_t i = 0; i < cloud.size(); ++i) grad.set(i, zero);
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto& sp = prep.splats[k];
    const double* g = &total[k * kStride];
    const GaussianPrimitive prim = cloud.get(sp.index);
    GaussianPrimitive gp =
        project_gaussian_vjp(prim, cam, sp.proj, {g[0], g[1]}, Cov2{g[2], g[3], g[4]}, g[5]);
    gp.opacity = g[6] * sp.opacity * (1.0 - sp.opacity);
    gp.color = {g[7], g[8], g[9]};
    grad.set(sp.index, gp);
  }
  return grad;
}

/// Distance of the render from its two discontinuities: the smallest
/// |log(w / w_cut)| over in-window splat weights and the smallest
/// |alpha - alpha_min| over pixels.
inline double raster_margin(const GaussianCloud& cloud, const Camera& cam, const RasterSettings& s = {}) {
  const auto prep = detail::prepare(cloud, cam, s);
  double m = std::numeric_limits<double>::infinity();
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      double t = 1.0, acc_a = 0.0;
      for (int k : prep.block_lists[y / detail::kRowsPerBlock]) {
        const auto& sp = prep.splats[k];
        if (x < sp.x0 || x > sp.x1 || y < sp.y0 || y > sp.y1) continue;
        const double w = detail::splat_weight(sp, x, y, 0.0);
        m = std::min(m, std::abs(std::log(w / s.w_cut)));
        if (w < s.w_cut) continue;
        const double a = sp.opacity * w;
        acc_a += a * t;
        t *= 1.0 - a;
      }
      m = std::min(m, std::abs(acc_a - s.alpha_min));
    }
  return m;
}

/// Discrete state of the render's switches: which splats fall inside each
/// pixel window, which side of the cutoff each weight is on, and which side of
/// alpha_min each pixel lands. Equal signatures mean no switch was crossed.
inline std::vector<int> raster_signature(const GaussianCloud& cloud, const Camera& cam, const RasterSettings& s = {}) {
  const auto prep = detail::prepare(cloud, cam, s);
  std::vector<int> sig;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      double t = 1.0, acc_a = 0.0;
      for (int k : prep.block_lists[y / detail::kRowsPerBlock]) {
        const auto& sp = prep.splats[k];
        if (x < sp.x0 || x > sp.x1 || y < sp.y0 || y > sp.y1) continue;
        const double w = detail::splat_weight(sp, x, y, 0.0);
        sig.push_back(k);
        sig.push_back(w < s.w_cut ? -1 : 1);
        if (w < s.w_cut) continue;
        const double a = sp.opacity * w;
        acc_a += a * t;
        t *= 1.0 - a;
      }
      sig.push_back(acc_a < s.alpha_min ? -1 : 1);
    }
  return sig;
}

}  // namespace dpgs
