#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "dpgs/core/error.hpp"
#include "dpgs/core/math.hpp"

namespace dpgs {

/// One anisotropic 3D Gaussian. Scale is stored as log-scale and opacity as a
/// logit so the optimizer works in unconstrained coordinates.
struct GaussianPrimitive {
  Vec3 mean{};
  Vec4 rotation{1, 0, 0, 0};  ///< quaternion (w, x, y, z)
  Vec3 log_scale{};
  double opacity = 0.0;  ///< logit; alpha = sigmoid(opacity)
  Vec3 color{};

  Vec3 scale() const { return {std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2])}; }
  double alpha() const { return sigmoid(opacity); }
};

/// Structure-of-arrays Gaussian set; each attribute is one parameter slot.
class GaussianCloud {
 public:
  GaussianCloud() = default;
  explicit GaussianCloud(std::size_t n)
      : means_(3 * n), rotations_(4 * n), log_scales_(3 * n), opacities_(n), colors_(3 * n) {
    for (std::size_t i = 0; i < n; ++i) rotations_[4 * i] = 1.0;
  }

  std::size_t size() const noexcept { return opacities_.size(); }

  GaussianPrimitive get(std::size_t i) const {
    GaussianPrimitive g;
    for (int k = 0; k < 3; ++k) {
      g.mean[k] = means_[3 * i + k];
      g.log_scale[k] = log_scales_[3 * i + k];
      g.color[k] = colors_[3 * i + k];
    }
    for (int k = 0; k < 4; ++k) g.rotation[k] = rotations_[4 * i + k];
    g.opacity = opacities_[i];
    return g;
  }

  void set(std::size_t i, const GaussianPrimitive& g) {
    for (int k = 0; k < 3; ++k) {
      means_[3 * i + k] = g.mean[k];
      log_scales_[3 * i + k] = g.log_scale[k];
      colors_[3 * i + k] = g.color[k];
    }
    for (int k = 0; k < 4; ++k) rotations_[4 * i + k] = g.rotation[k];
    opacities_[i] = g.opacity;
  }

  void push_back(const GaussianPrimitive& g) {
    means_.resize(means_.size() + 3);
    rotations_.resize(rotations_.size() + 4);
    log_scales_.resize(log_scales_.size() + 3);
    opacities_.resize(opacities_.size() + 1);
    colors_.resize(colors_.size() + 3);
    set(size() - 1, g);
  }

  /// Adds another cloud's attributes elementwise (gradient accumulation).
  void add(const GaussianCloud& o) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    acc(means_, o.means_);
    acc(rotations_, o.rotations_);
    acc(log_scales_, o.log_scales_);
    acc(opacities_, o.opacities_);
    acc(colors_, o.colors_);
  }

  /// Post-step projection: unit quaternions and nonnegative colors.
  void project_constraints() {
    for (std::size_t i = 0; i < size(); ++i) {
      double n = 0;
      for (int k = 0; k < 4; ++k) n += rotations_[4 * i + k] * rotations_[4 * i + k];
      n = std::sqrt(n);
      if (n > 0)
        for (int k = 0; k < 4; ++k) rotations_[4 * i + k] /= n;
      else
        rotations_[4 * i] = 1.0;
    }
    for (double& c : colors_) c = std::max(c, 0.0);
  }

  bool operator==(const GaussianCloud&) const = default;

  template <class Fn>
  friend void visit_slots(GaussianCloud& c, Fn&& fn) {
    fn("gauss.color", std::span<double>(c.colors_));
    fn("gauss.log_scale", std::span<double>(c.log_scales_));
    fn("gauss.mean", std::span<double>(c.means_));
    fn("gauss.opacity", std::span<double>(c.opacities_));
    fn("gauss.rotation", std::span<double>(c.rotations_));
  }

 private:
  std::vector<double> means_, rotations_, log_scales_, opacities_, colors_;
};

/// Pinhole camera with a world-to-camera rigid transform. Pixel centers sit at
/// integer coordinates; +x right, +y down, +z forward.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3 rotation = identity3();  ///< world -> camera
  Vec3 translation{};
  int width = 0, height = 0;

  bool operator==(const Camera&) const = default;

  Vec3 to_camera(const Vec3& p) const {
    const Vec3 r = mat_vec(rotation, p);
    return {r[0] + translation[0], r[1] + translation[1], r[2] + translation[2]};
  }

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw InvalidArgument("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidArgument("camera image dimensions must be positive");
    const Mat3 rrt = mat_mul(rotation, transpose(rotation));
    const Mat3 id = identity3();
    for (int i = 0; i < 9; ++i)
      if (std::abs(rrt[i] - id[i]) > 1e-9) throw InvalidArgument("camera rotation not orthonormal");
  }

  /// Camera at `eye` looking at `target` with world +y as image-down.
  static Camera look_at(const Vec3& eye, const Vec3& target, double fx, double fy, double cx,
                        double cy, int width, int height) {
    const Vec3 f = normalized(sub(target, eye));
    Vec3 down{0, 1, 0};
    Vec3 r = normalized(cross(down, f));
    down = cross(f, r);
    Camera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.width = width;
    cam.height = height;
    cam.rotation = {r[0], r[1], r[2], down[0], down[1], down[2], f[0], f[1], f[2]};
    const Vec3 re = mat_vec(cam.rotation, eye);
    cam.translation = {-re[0], -re[1], -re[2]};
    return cam;
  }
};

}  // namespace dpgs
