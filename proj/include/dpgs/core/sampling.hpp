#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpgs/core/field.hpp"

namespace dpgs {

namespace detail {
inline void check_factor(int factor) {
  if (factor != 2 && factor != 4)
    throw InvalidArgument("resampling factor must be 2 or 4, got " + std::to_string(factor));
}
inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Bilinear tap along one axis: source coordinate for output index `o`,
// clamped to the valid sample range.
struct Tap {
  int i0, i1;
  double w1;
};
inline Tap bilinear_tap(int o, int factor, int src_len) {
  double s = (o + 0.5) / factor - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
  const int i0 = static_cast<int>(std::floor(s));
  const int i1 = std::min(i0 + 1, src_len - 1);
  return {i0, i1, s - i0};
}
}  // namespace detail

/// One level of a depth pyramid.
struct PyramidLevel {
  int scale = 1;
  ScalarField field;
};

/// Block-mean downsampling with ceil sizing; partial border blocks average the
/// pixels they cover.
template <int N>
Field<N> downsample(const Field<N>& f, int factor) {
  detail::check_factor(factor);
  const int ow = detail::ceil_div(f.width(), factor);
  const int oh = detail::ceil_div(f.height(), factor);
  Field<N> out(ow, oh);
  for (int oy = 0; oy < oh; ++oy) {
    const int y1 = std::min(f.height(), (oy + 1) * factor);
    for (int ox = 0; ox < ow; ++ox) {
      const int x1 = std::min(f.width(), (ox + 1) * factor);
      const int count = (y1 - oy * factor) * (x1 - ox * factor);
      for (int c = 0; c < N; ++c) {
        double s = 0.0;
        for (int y = oy * factor; y < y1; ++y)
          for (int x = ox * factor; x < x1; ++x) s += f.at(x, y, c);
        out.at(ox, oy, c) = s / count;
      }
    }
  }
  return out;
}

/// Adjoint of downsample: spreads each output gradient evenly over its block.
template <int N>
Field<N> downsample_adjoint(const Field<N>& grad_out, int factor, int in_width, int in_height) {
  detail::check_factor(factor);
  Field<N> g(in_width, in_height);
  for (int y = 0; y < in_height; ++y) {
    const int oy = y / factor;
    const int rows = std::min(in_height, (oy + 1) * factor) - oy * factor;
    for (int x = 0; x < in_width; ++x) {
      const int ox = x / factor;
      const int cols = std::min(in_width, (ox + 1) * factor) - ox * factor;
      for (int c = 0; c < N; ++c) g.at(x, y, c) = grad_out.at(ox, oy, c) / (rows * cols);
    }
  }
  return g;
}

/// Bilinear upsampling with edge clamping to explicit target dimensions, so a
/// down/up round trip restores the original size exactly.
template <int N>
Field<N> upsample(const Field<N>& f, int factor, int target_width, int target_height) {
  detail::check_factor(factor);
  if (target_width < f.width() || target_height < f.height())
    throw InvalidArgument("upsample target dimensions smaller than input");
  Field<N> out(target_width, target_height);
  std::vector<detail::Tap> xt(target_width);
  for (int x = 0; x < target_width; ++x) xt[x] = detail::bilinear_tap(x, factor, f.width());
  for (int y = 0; y < target_height; ++y) {
    const auto ty = detail::bilinear_tap(y, factor, f.height());
    for (int x = 0; x < target_width; ++x) {
      const auto& tx = xt[x];
      for (int c = 0; c < N; ++c) {
        const double top = f.at(tx.i0, ty.i0, c) * (1 - tx.w1) + f.at(tx.i1, ty.i0, c) * tx.w1;
        const double bot = f.at(tx.i0, ty.i1, c) * (1 - tx.w1) + f.at(tx.i1, ty.i1, c) * tx.w1;
        out.at(x, y, c) = top * (1 - ty.w1) + bot * ty.w1;
      }
    }
  }
  return out;
}

/// Adjoint of upsample (transpose of the bilinear interpolation matrix).
template <int N>
Field<N> upsample_adjoint(const Field<N>& grad_out, int factor, int in_width, int in_height) {
  detail::check_factor(factor);
  Field<N> g(in_width, in_height);
  for (int y = 0; y < grad_out.height(); ++y) {
    const auto ty = detail::bilinear_tap(y, factor, in_height);
    for (int x = 0; x < grad_out.width(); ++x) {
      const auto tx = detail::bilinear_tap(x, factor, in_width);
      for (int c = 0; c < N; ++c) {
        const double v = grad_out.at(x, y, c);
        g.at(tx.i0, ty.i0, c) += v * (1 - tx.w1) * (1 - ty.w1);
        g.at(tx.i1, ty.i0, c) += v * tx.w1 * (1 - ty.w1);
        g.at(tx.i0, ty.i1, c) += v * (1 - tx.w1) * ty.w1;
        g.at(tx.i1, ty.i1, c) += v * tx.w1 * ty.w1;
      }
    }
  }
  return g;
}

/// Full, 1/2 and 1/4 resolution levels.
inline std::vector<PyramidLevel> build_pyramid(const ScalarField& f) {
  return {{1, f}, {2, downsample(f, 2)}, {4, downsample(f, 4)}};
}

}  // namespace dpgs
