#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "dpgs/core/error.hpp"
#include "dpgs/core/field.hpp"
#include "dpgs/core/filter.hpp"
#include "dpgs/core/reduce.hpp"
#include "dpgs/core/sampling.hpp"
#include "dpgs/physics/attenuation.hpp"

namespace dpgs {

struct LossWeights {
  double w1 = 1.0, w2 = 0.05, w3 = 0.05, w4 = 0.01, w5 = 0.2;
  double mu = 1.0;
  double lambda_edge = 0.1;
  double alpha_s = 10.0;
  double lambda_ms = 0.5;
  double gamma_wat = 1.0;
  double lambda_d = 0.2;  // SSIM share of l_basic
  // alpha(w), beta(w) run linearly from the *_clear value at w = 0 to *_turbid at w = 1
  double alpha_clear = 1.2, alpha_turbid = 0.8;
  double beta_clear = 0.8, beta_turbid = 1.2;

  void validate() const {
    for (double v : {w1, w2, w3, w4, w5, mu, lambda_edge, alpha_s, lambda_ms, gamma_wat, lambda_d,
                     alpha_clear, alpha_turbid, beta_clear, beta_turbid})
      if (!(v >= 0) || !std::isfinite(v)) throw InvalidArgument("loss weights must be finite and >= 0");
    if (lambda_d > 1) throw InvalidArgument("lambda_d must be in [0, 1]");
  }
};

struct LossBreakdown {
  double basic = 0, ab = 0, wat = 0, edge = 0, ms = 0, total = 0;
  double att = 0, sca = 0;
};

// ---- elementwise -----------------------------------------------------------

template <int N>
double l1(const Field<N>& o, const Field<N>& t) {
  require_same_dims(o, t, "l1");
  std::vector<double> d(o.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(o[i] - t[i]);
  return pairwise_mean(d);
}

/// d l1 / d o (sign(0) taken as 0).
template <int N>
Field<N> l1_grad(const Field<N>& o, const Field<N>& t, double scale = 1.0) {
  Field<N> g(o.width(), o.height());
  const double k = scale / static_cast<double>(o.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = o[i] - t[i];
    g[i] = d > 0 ? k : (d < 0 ? -k : 0.0);
  }
  return g;
}

template <int N>
double mse(const Field<N>& o, const Field<N>& t) {
  require_same_dims(o, t, "mse");
  std::vector<double> d(o.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (o[i] - t[i]) * (o[i] - t[i]);
  return pairwise_mean(d);
}

// ---- SSIM ------------------------------------------------------------------

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

struct SsimChannel {
  ScalarField mx, my, vx, vy, cxy, s;
};

inline SsimChannel ssim_channel(const ScalarField& x, const ScalarField& y,
                                const std::vector<double>& taps) {
  SsimChannel r;
  const std::size_t n = x.size();
  ScalarField xx(x.width(), x.height()), yy = xx, xy = xx;
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  r.mx = separable_filter(x, taps);
  r.my = separable_filter(y, taps);
  r.vx = separable_filter(xx, taps);
  r.vy = separable_filter(yy, taps);
  r.cxy = separable_filter(xy, taps);
  r.s = ScalarField(x.width(), x.height());
  for (std::size_t i = 0; i < n; ++i) {
    r.vx[i] -= r.mx[i] * r.mx[i];
    r.vy[i] -= r.my[i] * r.my[i];
    r.cxy[i] -= r.mx[i] * r.my[i];
    r.s[i] = ((2 * r.mx[i] * r.my[i] + kSsimC1) * (2 * r.cxy[i] + kSsimC2)) /
             ((r.mx[i] * r.mx[i] + r.my[i] * r.my[i] + kSsimC1) * (r.vx[i] + r.vy[i] + kSsimC2));
  }
  return r;
}

}  // namespace detail

/// Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5).
inline double ssim(const ColorField& x, const ColorField& y) {
  require_same_dims(x, y, "ssim");
  const auto taps = gaussian_taps(kSsimWindow, kSsimSigma);
  std::vector<double> all;
  all.reserve(x.size());
  for (int c = 0; c < 3; ++c) {
    const auto r = detail::ssim_channel(channel(x, c), channel(y, c), taps);
    all.insert(all.end(), r.s.data().begin(), r.s.data().end());
  }
  return pairwise_mean(all);
}

/// Gradient of mean SSIM with respect to x, times `scale`.
inline ColorField ssim_grad(const ColorField& x, const ColorField& y, double scale = 1.0) {
  require_same_dims(x, y, "ssim");
  const auto taps = gaussian_taps(kSsimWindow, kSsimSigma);
  const int w = x.width(), h = x.height();
  const double k = scale / static_cast<double>(x.size());
  ColorField g(w, h);
  for (int c = 0; c < 3; ++c) {
    const ScalarField xc = channel(x, c), yc = channel(y, c);
    const auto r = detail::ssim_channel(xc, yc, taps);
    ScalarField gm(w, h), gv(w, h), gc(w, h);
    for (std::size_t i = 0; i < gm.size(); ++i) {
      const double a1 = 2 * r.mx[i] * r.my[i] + kSsimC1, a2 = 2 * r.cxy[i] + kSsimC2;
      const double b1 = r.mx[i] * r.mx[i] + r.my[i] * r.my[i] + kSsimC1, b2 = r.vx[i] + r.vy[i] + kSsimC2;
      const double s = r.s[i];
      const double d_mx = 2 * r.my[i] * a2 / (b1 * b2) - s * 2 * r.mx[i] / b1;
      const double d_vx = -s / b2;
      const double d_cxy = 2 * a1 / (b1 * b2);
      gm[i] = k * (d_mx - 2 * r.mx[i] * d_vx - r.my[i] * d_cxy);
      gv[i] = k * d_vx;
      gc[i] = k * d_cxy;
    }
    const ScalarField am = separable_filter_adjoint(gm, taps);
    const ScalarField av = separable_filter_adjoint(gv, taps);
    const ScalarField ac = separable_filter_adjoint(gc, taps);
    for (std::size_t i = 0; i < am.size(); ++i) g[3 * i + c] = am[i] + 2 * xc[i] * av[i] + yc[i] * ac[i];
  }
  return g;
}

inline double psnr(const ColorField& o, const ColorField& t) {
  const double e = mse(o, t);
  if (e < 1e-10) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / e));
}

// ---- objective terms -------------------------------------------------------

inline double l_basic(const ColorField& o, const ColorField& t, double lambda_d = 0.2) {
  return (1 - lambda_d) * l1(o, t) + lambda_d * (1 - ssim(o, t)) / 2;
}

inline ColorField l_basic_grad(const ColorField& o, const ColorField& t, double lambda_d = 0.2,
                               double scale = 1.0) {
  ColorField g = l1_grad(o, t, (1 - lambda_d) * scale);
  if (lambda_d > 0) {
    const ColorField gs = ssim_grad(o, t, -lambda_d / 2 * scale);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs[i];
  }
  return g;
}

/// mean(B_s * Dn) - mean(Abar * Dn) + mu * MSE(B_s + T_map, 1), Dn = D / d_far.
inline double l_ab(const ScalarField& bs, const ScalarField& abar, const ScalarField& depth,
                   const ScalarField& t_map, double mu, double d_far) {
  require_same_dims(bs, abar, "l_ab");
  require_same_dims(bs, depth, "l_ab");
  require_same_dims(bs, t_map, "l_ab");
  const std::size_t n = bs.size();
  std::vector<double> s1(n), s2(n), s3(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dn = depth[i] / d_far;
    s1[i] = bs[i] * dn;
    s2[i] = abar[i] * dn;
    const double r = bs[i] + t_map[i] - 1.0;
    s3[i] = r * r;
  }
  return pairwise_mean(s1) - pairwise_mean(s2) + mu * pairwise_mean(s3);
}

struct LabGrad {
  ScalarField bs, abar, depth, t_map;
};

inline LabGrad l_ab_grad(const ScalarField& bs, const ScalarField& abar, const ScalarField& depth,
                         const ScalarField& t_map, double mu, double d_far, double scale = 1.0) {
  const std::size_t n = bs.size();
  const int w = bs.width(), h = bs.height();
  LabGrad g{ScalarField(w, h), ScalarField(w, h), ScalarField(w, h), ScalarField(w, h)};
  const double k = scale / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dn = depth[i] / d_far;
    const double r = 2 * mu * (bs[i] + t_map[i] - 1.0);
    g.bs[i] = k * (dn + r);
    g.t_map[i] = k * r;
    g.abar[i] = -k * dn;
    g.depth[i] = k * (bs[i] - abar[i]) / d_far;
  }
  return g;
}

/// Edge-aware regularizer weights, built from a (gradient-stopped) depth map.
struct EdgeWeights {
  ScalarField w_edge, w_smooth;
};

/// Finite-difference image gradient: Sobel response scaled to unit slope.
inline std::pair<ScalarField, ScalarField> image_gradients(const ScalarField& f) {
  auto [gx, gy] = sobel_gradients(f);
  for (double& v : gx.data()) v /= 8.0;
  for (double& v : gy.data()) v /= 8.0;
  return {std::move(gx), std::move(gy)};
}

inline EdgeWeights edge_weights(const ScalarField& depth, double alpha_s) {
  EdgeWeights ew{normalize_by_p95(sobel_magnitude(depth)), ScalarField(depth.width(), depth.height())};
  const auto [gx, gy] = image_gradients(depth);
  for (std::size_t i = 0; i < gx.size(); ++i)
    ew.w_smooth[i] = std::exp(-alpha_s * (std::abs(gx[i]) + std::abs(gy[i])));
  return ew;
}

inline double l_edge(const ScalarField& bs, const EdgeWeights& ew, double lambda_edge) {
  require_same_dims(bs, ew.w_edge, "l_edge");
  const auto [gx, gy] = image_gradients(bs);
  const std::size_t n = bs.size();
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = std::abs(bs[i] * ew.w_edge[i]);
    b[i] = ew.w_smooth[i] * (std::abs(gx[i]) + std::abs(gy[i]));
  }
  return pairwise_mean(a) + lambda_edge * pairwise_mean(b);
}

inline double l_edge(const ScalarField& bs, const ScalarField& depth, double lambda_edge, double alpha_s) {
  return l_edge(bs, edge_weights(depth, alpha_s), lambda_edge);
}

inline ScalarField l_edge_grad(const ScalarField& bs, const EdgeWeights& ew, double lambda_edge,
                               double scale = 1.0) {
  const auto [gx, gy] = image_gradients(bs);
  const std::size_t n = bs.size();
  const double k = scale / static_cast<double>(n);
  auto sgn = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
  ScalarField g(bs.width(), bs.height()), ggx(bs.width(), bs.height()), ggy(bs.width(), bs.height());
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = k * sgn(bs[i] * ew.w_edge[i]) * ew.w_edge[i];
    const double s = k * lambda_edge * ew.w_smooth[i] / 8.0;
    ggx[i] = s * sgn(gx[i]);
    ggy[i] = s * sgn(gy[i]);
  }
  correlate3x3_adjoint_accumulate(ggx, kSobelX, g);
  correlate3x3_adjoint_accumulate(ggy, kSobelY, g);
  return g;
}

inline constexpr int kMsScales[] = {2, 4};

/// L1 at full resolution plus lambda_ms times the mean L1 over the 1/2 and 1/4 block-mean pyramids.
inline double l_ms(const ColorField& o, const ColorField& t, double lambda_ms) {
  double v = l1(o, t);
  if (lambda_ms == 0) return v;
  double extra = 0;
  for (int s : kMsScales) extra += l1(downsample(o, s), downsample(t, s));
  return v + lambda_ms / std::size(kMsScales) * extra;
}

inline ColorField l_ms_grad(const ColorField& o, const ColorField& t, double lambda_ms, double scale = 1.0) {
  ColorField g = l1_grad(o, t, scale);
  if (lambda_ms == 0) return g;
  for (int s : kMsScales) {
    const ColorField gd = l1_grad(downsample(o, s), downsample(t, s), scale * lambda_ms / std::size(kMsScales));
    const ColorField gu = downsample_adjoint(gd, s, o.width(), o.height());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gu[i];
  }
  return g;
}

struct WatCoefficients {
  double alpha, beta;
};

/// alpha(w), beta(w); w outside [0, 1] is clamped.
inline WatCoefficients wat_coefficients(double w, const LossWeights& lw) {
  if (w < 0 || w > 1) {
    std::fprintf(stderr, "warning: water index %g clamped to [0, 1]\n", w);
    w = std::clamp(w, 0.0, 1.0);
  }
  return {lw.alpha_clear + (lw.alpha_turbid - lw.alpha_clear) * w,
          lw.beta_clear + (lw.beta_turbid - lw.beta_clear) * w};
}

inline double l_wat(double l_att, double l_sca, double l_ab_val, double w, const LossWeights& lw) {
  const auto c = wat_coefficients(w, lw);
  return c.alpha * l_att + c.beta * l_sca + lw.gamma_wat * l_ab_val;
}

inline double l_total(const LossBreakdown& parts, const LossWeights& lw) {
  const char* names[] = {"basic", "ab", "wat", "edge", "ms"};
  const double vals[] = {parts.basic, parts.ab, parts.wat, parts.edge, parts.ms};
  for (int i = 0; i < 5; ++i)
    if (!std::isfinite(vals[i])) throw DivergedError(std::string("non-finite loss term '") + names[i] + "'", "l_total");
  return lw.w1 * parts.basic + lw.w2 * parts.ab + lw.w3 * parts.wat + lw.w4 * parts.edge + lw.w5 * parts.ms;
}

}  // namespace dpgs
