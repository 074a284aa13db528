#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dpgs/core/error.hpp"
#include "dpgs/core/reduce.hpp"

namespace dpgs {

/// Row-major H x W grid with `Channels` interleaved floats per pixel.
template <int Channels>
class Field {
  static_assert(Channels >= 1);

 public:
  static constexpr int kChannels = Channels;

  Field() = default;
  Field(int width, int height, double fill = 0.0)
      : width_(checked_dim(width)), height_(checked_dim(height)),
        data_(static_cast<std::size_t>(width) * height * Channels, fill) {}
  Field(int width, int height, std::vector<double> data)
      : width_(checked_dim(width)), height_(checked_dim(height)), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(width) * height * Channels)
      throw InvalidArgument("field data length does not match dimensions");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const noexcept { return data_[index(x, y, c)]; }
  /// Replicate-padded read.
  double clamped(int x, int y, int c = 0) const noexcept {
    return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1), c);
  }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  template <int M>
  bool same_dims(const Field<M>& o) const noexcept {
    return width_ == o.width() && height_ == o.height();
  }

  bool operator==(const Field&) const = default;

 private:
  static int checked_dim(int d) {
    if (d < 0) throw InvalidArgument("negative field dimension");
    return d;
  }
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * Channels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

using ScalarField = Field<1>;
using ColorField = Field<3>;

template <int A, int B>
void require_same_dims(const Field<A>& a, const Field<B>& b, const char* what) {
  if (!a.same_dims(b))
    throw InvalidArgument(std::string(what) + ": field dimensions differ (" +
                          std::to_string(a.width()) + "x" + std::to_string(a.height()) + " vs " +
                          std::to_string(b.width()) + "x" + std::to_string(b.height()) + ")");
}

template <int N>
bool all_finite(const Field<N>& f) {
  return std::all_of(f.data().begin(), f.data().end(), [](double v) { return std::isfinite(v); });
}

template <int N>
double mean(const Field<N>& f) {
  return pairwise_mean(f.data());
}

inline ScalarField channel(const ColorField& f, int c) {
  ScalarField out(f.width(), f.height());
  for (std::size_t i = 0; i < f.pixel_count(); ++i) out[i] = f[3 * i + c];
  return out;
}

inline ScalarField channel_mean(const ColorField& f) {
  ScalarField out(f.width(), f.height());
  for (std::size_t i = 0; i < f.pixel_count(); ++i)
    out[i] = (f[3 * i] + f[3 * i + 1] + f[3 * i + 2]) / 3.0;
  return out;
}

/// Rec.709 luminance of linear RGB.
inline ScalarField luma(const ColorField& f) {
  ScalarField out(f.width(), f.height());
  for (std::size_t i = 0; i < f.pixel_count(); ++i)
    out[i] = 0.2126 * f[3 * i] + 0.7152 * f[3 * i + 1] + 0.0722 * f[3 * i + 2];
  return out;
}

template <int N>
Field<N> clamp01(Field<N> f) {
  for (double& v : f.data()) v = std::clamp(v, 0.0, 1.0);
  return f;
}

/// Per-channel mean over all pixels.
inline std::array<double, 3> channel_means(const ColorField& f) {
  std::array<double, 3> m{};
  for (int c = 0; c < 3; ++c) m[c] = mean(channel(f, c));
  return m;
}

/// p-quantile (0..1) with linear interpolation between order statistics.
inline double quantile(std::span<const double> v, double p) {
  if (v.empty()) return 0.0;
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double pos = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return s[lo] + t * (s[hi] - s[lo]);
}

}  // namespace dpgs
