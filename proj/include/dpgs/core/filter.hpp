#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "dpgs/core/field.hpp"

namespace dpgs {

/// 3x3 kernel in row-major order, applied as a correlation.
using Kernel3 = std::array<double, 9>;

inline constexpr Kernel3 kSobelX{-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr Kernel3 kSobelY{-1, -2, -1, 0, 0, 0, 1, 2, 1};
inline constexpr Kernel3 kBox3{1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9,
                               1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9};

/// Replicate-padded 3x3 correlation.
inline ScalarField correlate3x3(const ScalarField& f, const Kernel3& k) {
  ScalarField out(f.width(), f.height());
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) s += k[(dy + 1) * 3 + dx + 1] * f.clamped(x + dx, y + dy);
      out.at(x, y) = s;
    }
  return out;
}

/// Accumulates the input-gradient of correlate3x3 into `grad_in`.
inline void correlate3x3_adjoint_accumulate(const ScalarField& grad_out, const Kernel3& k,
                                            ScalarField& grad_in) {
  const int w = grad_out.width(), h = grad_out.height();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double g = grad_out.at(x, y);
      if (g == 0.0) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        const int sy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = std::clamp(x + dx, 0, w - 1);
          grad_in.at(sx, sy) += k[(dy + 1) * 3 + dx + 1] * g;
        }
      }
    }
}

inline ScalarField correlate3x3_adjoint(const ScalarField& grad_out, const Kernel3& k) {
  ScalarField g(grad_out.width(), grad_out.height());
  correlate3x3_adjoint_accumulate(grad_out, k, g);
  return g;
}

/// Gradient of sum(grad_out * correlate3x3(f, k)) with respect to k.
inline Kernel3 correlate3x3_kernel_grad(const ScalarField& f, const ScalarField& grad_out) {
  Kernel3 gk{};
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x) {
      const double g = grad_out.at(x, y);
      if (g == 0.0) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) gk[(dy + 1) * 3 + dx + 1] += g * f.clamped(x + dx, y + dy);
    }
  return gk;
}

/// Horizontal and vertical 3x3 Sobel responses with replicate padding.
inline std::pair<ScalarField, ScalarField> sobel_gradients(const ScalarField& f) {
  if (f.width() < 3 || f.height() < 3) throw InvalidArgument("sobel_gradients needs at least 3x3");
  // Written as a difference of two weighted sums so flat regions give exactly 0.
  ScalarField gx(f.width(), f.height()), gy(f.width(), f.height());
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x) {
      const double r = f.clamped(x + 1, y - 1) + 2.0 * f.clamped(x + 1, y) + f.clamped(x + 1, y + 1);
      const double l = f.clamped(x - 1, y - 1) + 2.0 * f.clamped(x - 1, y) + f.clamped(x - 1, y + 1);
      const double b = f.clamped(x - 1, y + 1) + 2.0 * f.clamped(x, y + 1) + f.clamped(x + 1, y + 1);
      const double t = f.clamped(x - 1, y - 1) + 2.0 * f.clamped(x, y - 1) + f.clamped(x + 1, y - 1);
      gx.at(x, y) = r - l;
      gy.at(x, y) = b - t;
    }
  return {std::move(gx), std::move(gy)};
}

/// Pointwise Sobel magnitude sqrt(gx^2 + gy^2).
inline ScalarField sobel_magnitude(const ScalarField& f) {
  auto [gx, gy] = sobel_gradients(f);
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = std::hypot(gx[i], gy[i]);
  return gx;
}

/// Normalized 1-D Gaussian taps of odd length.
inline std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> t(size);
  const int r = size / 2;
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    t[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    s += t[i];
  }
  for (double& v : t) v /= s;
  return t;
}

/// Separable replicate-padded correlation with symmetric taps.
inline ScalarField separable_filter(const ScalarField& f, const std::vector<double>& taps) {
  const int w = f.width(), h = f.height(), r = static_cast<int>(taps.size()) / 2;
  ScalarField tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += taps[k + r] * f.at(std::clamp(x + k, 0, w - 1), y);
      tmp.at(x, y) = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += taps[k + r] * tmp.at(x, std::clamp(y + k, 0, h - 1));
      out.at(x, y) = s;
    }
  return out;
}

/// Transpose of separable_filter.
inline ScalarField separable_filter_adjoint(const ScalarField& g, const std::vector<double>& taps) {
  const int w = g.width(), h = g.height(), r = static_cast<int>(taps.size()) / 2;
  ScalarField tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = g.at(x, y);
      for (int k = -r; k <= r; ++k) tmp.at(x, std::clamp(y + k, 0, h - 1)) += taps[k + r] * v;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = tmp.at(x, y);
      for (int k = -r; k <= r; ++k) out.at(std::clamp(x + k, 0, w - 1), y) += taps[k + r] * v;
    }
  return out;
}

}  // namespace dpgs
