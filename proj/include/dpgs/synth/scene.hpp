#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dpgs/core/error.hpp"
#include "dpgs/core/field.hpp"
#include "dpgs/render/rasterizer.hpp"

namespace dpgs {

enum class WaterClass { clear = 0, medium = 1, turbid = 2 };

inline const char* to_string(WaterClass c) {
  switch (c) {
    case WaterClass::clear: return "clear";
    case WaterClass::medium: return "medium";
    case WaterClass::turbid: return "turbid";
  }
  return "?";
}

inline WaterClass parse_water_class(const std::string& s) {
  if (s == "clear") return WaterClass::clear;
  if (s == "medium") return WaterClass::medium;
  if (s == "turbid") return WaterClass::turbid;
  throw InvalidArgument("unknown water class '" + s + "' (expected clear, medium or turbid)");
}

/// Ground-truth medium: direct attenuation beta_c, backscatter coefficient b
/// and veiling light B_inf.
struct MediumParams {
  Vec3 beta{};
  double b = 0;
  Vec3 binf{};

  bool operator==(const MediumParams&) const = default;

  void validate() const {
    for (int c = 0; c < 3; ++c) {
      if (!(beta[c] >= 0) || !std::isfinite(beta[c])) throw InvalidArgument("beta must be finite and >= 0");
      if (!(binf[c] >= 0 && binf[c] <= 1)) throw InvalidArgument("B_inf must lie in [0, 1]");
    }
    if (!(b >= 0) || !std::isfinite(b)) throw InvalidArgument("b must be finite and >= 0");
  }
};

/// Class-conditioned random medium.
inline MediumParams sample_medium(WaterClass cls, std::mt19937_64& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  MediumParams m;
  switch (cls) {
    case WaterClass::clear:
      m.beta = {u(0.25, 0.40), u(0.08, 0.14), u(0.05, 0.09)};
      m.b = u(0.02, 0.06);
      m.binf = {u(0.02, 0.10), u(0.25, 0.40), u(0.50, 0.70)};
      break;
    case WaterClass::medium:
      m.beta = {u(0.30, 0.45), u(0.11, 0.14), u(0.10, 0.13)};
      m.b = u(0.07, 0.13);
      m.binf = {u(0.05, 0.15), u(0.38, 0.46), u(0.42, 0.50)};
      break;
    case WaterClass::turbid:
      m.beta = {u(0.35, 0.50), u(0.12, 0.20), u(0.20, 0.30)};
      m.b = u(0.15, 0.35);
      m.binf = {u(0.08, 0.18), u(0.40, 0.60), u(0.20, 0.35)};
      break;
  }
  return m;
}

/// I_c = J_c exp(-beta_c D) + B_inf_c (1 - exp(-b D)), clamped to [0, 1].
inline ColorField degrade(const ColorField& clean, const ScalarField& depth, const MediumParams& m) {
  require_same_dims(clean, depth, "degrade");
  ColorField out(clean.width(), clean.height());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double d = depth[i];
    if (d < 0) throw InvalidArgument("degrade: negative depth");
    const double bs = 1.0 - std::exp(-m.b * d);
    for (int c = 0; c < 3; ++c)
      out[3 * i + c] = std::clamp(clean[3 * i + c] * std::exp(-m.beta[c] * d) + m.binf[c] * bs, 0.0, 1.0);
  }
  return out;
}

struct SceneSpec {
  std::uint64_t seed = 1;
  int n_gaussians = 200;
  int width = 96, height = 96;
  int n_views = 8;
  WaterClass water = WaterClass::medium;
  MediumParams medium{};
  double d_min = 2.0, d_max = 10.0;
  double arc_degrees = 24.0;

  bool operator==(const SceneSpec&) const = default;

  /// Spec whose medium is drawn from the class ranges (deterministic in seed).
  static SceneSpec for_class(WaterClass cls, std::uint64_t seed) {
    SceneSpec s;
    s.seed = seed;
    s.water = cls;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    s.medium = sample_medium(cls, rng);
    return s;
  }

  void validate() const {
    if (n_gaussians < 1) throw InvalidArgument("n_gaussians must be >= 1");
    if (width < 8 || height < 8) throw InvalidArgument("image dimensions must be at least 8x8");
    if (n_views < 1) throw InvalidArgument("n_views must be >= 1");
    if (!(d_min > 0) || !(d_max > d_min)) throw InvalidArgument("depth range requires 0 < d_min < d_max");
    if (!(arc_degrees >= 0 && arc_degrees < 180)) throw InvalidArgument("arc_degrees must be in [0, 180)");
    medium.validate();
  }
};

struct SceneBundle {
  GaussianCloud cloud;
  std::vector<Camera> cameras;
  std::vector<ColorField> clean;
  std::vector<ScalarField> depth;
  std::vector<ColorField> degraded;
  SceneSpec truth;

  std::size_t views() const { return cameras.size(); }
};

namespace detail {

/// Smooth value noise on [0,1]^2 from a seeded lattice.
class ValueNoise {
 public:
  ValueNoise(std::mt19937_64& rng, int cells) : cells_(cells), lattice_((cells + 1) * (cells + 1)) {
    std::uniform_real_distribution<double> u(0, 1);
    for (double& v : lattice_) v = u(rng);
  }
  double operator()(double x, double y) const {
    x = std::clamp(x, 0.0, 1.0) * cells_;
    y = std::clamp(y, 0.0, 1.0) * cells_;
    const int i = std::min(static_cast<int>(x), cells_ - 1), j = std::min(static_cast<int>(y), cells_ - 1);
    auto smooth = [](double t) { return t * t * (3 - 2 * t); };
    const double fx = smooth(x - i), fy = smooth(y - j);
    auto at = [&](int a, int b) { return lattice_[b * (cells_ + 1) + a]; };
    const double top = at(i, j) * (1 - fx) + at(i + 1, j) * fx;
    const double bot = at(i, j + 1) * (1 - fx) + at(i + 1, j + 1) * fx;
    return top * (1 - fy) + bot * fy;
  }

 private:
  int cells_;
  std::vector<double> lattice_;
};

struct Texture {
  std::array<ValueNoise, 3> channels;
  ValueNoise shade;
  Texture(std::mt19937_64& rng)
      : channels{ValueNoise(rng, 5), ValueNoise(rng, 5), ValueNoise(rng, 5)}, shade(rng, 9) {}
  Vec3 operator()(double u, double v) const {
    const double s = shade(u, v);
    Vec3 c;
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(0.1 + 0.6 * s + 0.2 * channels[k](u, v), 0.0, 1.0);
    return c;
  }
};

}  // namespace detail

/// Gaussians on a textured fronto-parallel relief seen by cameras on an arc;
/// clean/depth rendered, degraded via the forward oracle.
inline SceneBundle generate_scene(const SceneSpec& spec, const RasterSettings& raster = {}) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0, 1);
  const int w = spec.width, h = spec.height;
  const double f = 1.1 * w;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double zc = 0.5 * (spec.d_min + spec.d_max);
  const double span = spec.d_max - spec.d_min;

  detail::Texture texture(rng);
  detail::ValueNoise bumps(rng, 4);
  const double phase = 2 * std::numbers::pi * u01(rng);

  SceneBundle out;
  out.truth = spec;
  out.cloud = GaussianCloud(spec.n_gaussians);
  const double margin = 0.08;
  const double px_sigma = 0.8 * std::sqrt((1 + 2 * margin) * (1 + 2 * margin) * w * h / spec.n_gaussians);
  const double a1 = 0.7548776662466927, a2 = 0.5698402909980532;  // R2 sequence
  for (int i = 0; i < spec.n_gaussians; ++i) {
    const double su = std::fmod(0.5 + a1 * (i + 1), 1.0), sv = std::fmod(0.5 + a2 * (i + 1), 1.0);
    const double uu = -margin + (1 + 2 * margin) * su, vv = -margin + (1 + 2 * margin) * sv;
    const double rel = std::clamp(0.7 * std::clamp(vv, 0.0, 1.0) +
                                      0.3 * (0.5 + 0.5 * std::sin(3.0 * uu + phase) * bumps(uu, vv)),
                                  0.0, 1.0);
    const double z = spec.d_min + span * rel;
    GaussianPrimitive g;
    g.mean = {(uu * (w - 1) - cx) / f * z, (vv * (h - 1) - cy) / f * z, z};
    const double s = z * px_sigma / f;
    const double e1 = std::exp(0.25 * (2 * u01(rng) - 1)), e2 = std::exp(0.25 * (2 * u01(rng) - 1));
    g.log_scale = {std::log(s * e1), std::log(s * e2), std::log(0.3 * s)};
    const double theta = std::numbers::pi * u01(rng);
    g.rotation = {std::cos(theta / 2), 0, 0, std::sin(theta / 2)};
    g.opacity = 2.0 + 2.0 * u01(rng);
    g.color = texture(std::clamp(uu, 0.0, 1.0), std::clamp(vv, 0.0, 1.0));
    out.cloud.set(i, g);
  }

  const Vec3 center{0, 0, zc};
  const double half = spec.arc_degrees / 2 * std::numbers::pi / 180;
  for (int k = 0; k < spec.n_views; ++k) {
    const double t = spec.n_views == 1 ? 0.0 : -half + 2 * half * k / (spec.n_views - 1);
    const double lift = (k % 2 ? 1.0 : -1.0) * 0.03 * zc;
    const Vec3 eye{-zc * std::sin(t), lift, zc - zc * std::cos(t)};
    const Camera cam = Camera::look_at(eye, center, f, f, cx, cy, w, h);
    RenderOutput r = rasterize(out.cloud, cam, raster);
    bool visible = false;
    for (double a : r.alpha.data()) visible = visible || a > 0;
    if (!visible) throw GenerationFailed("view " + std::to_string(k) + " sees no Gaussians");
    out.cameras.push_back(cam);
    out.degraded.push_back(degrade(r.color, r.depth, spec.medium));
    out.clean.push_back(std::move(r.color));
    out.depth.push_back(std::move(r.depth));
  }
  return out;
}

struct LabeledImage {
  ColorField image;
  WaterClass label;
};

/// Small degraded textures with labels, `per_class` images for each class.
inline std::vector<LabeledImage> tinted_corpus(std::uint64_t seed, int per_class, int size = 32) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0, 1);
  std::vector<LabeledImage> out;
  for (int n = 0; n < per_class; ++n)
    for (WaterClass cls : {WaterClass::clear, WaterClass::medium, WaterClass::turbid}) {
      detail::Texture tex(rng);
      const MediumParams m = sample_medium(cls, rng);
      const double d0 = 2 + 3 * u01(rng), d1 = 5 + 5 * u01(rng);
      ColorField j(size, size);
      ScalarField d(size, size);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double uu = (x + 0.5) / size, vv = (y + 0.5) / size;
          const Vec3 c = tex(uu, vv);
          for (int k = 0; k < 3; ++k) j.at(x, y, k) = c[k];
          d.at(x, y) = d0 + (d1 - d0) * vv;
        }
      out.push_back({degrade(j, d, m), cls});
    }
  return out;
}

}  // namespace dpgs
