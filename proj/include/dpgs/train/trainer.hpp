#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dpgs/adapt/water.hpp"
#include "dpgs/synth/scene.hpp"
#include "dpgs/train/adam.hpp"
#include "dpgs/train/objective.hpp"

namespace dpgs {

struct TrainConfig {
  std::int64_t iterations = 2000;
  ControllerConfig controller{};
  LossWeights weights{};
  RasterSettings raster{};
  ScatterOptions scatter{};
  bool detach_depth = false;
  std::uint64_t seed = 1;
  std::int64_t eval_interval = 100;
  double init_jitter = 0.0;  // relative to each Gaussian's depth
  double init_gray = 0.5;
  std::size_t n_points = 200;  // seed points drawn from the bundle's depth maps

  void validate() const {
    if (iterations < 0) throw InvalidArgument("iterations must be >= 0");
    if (eval_interval < 1) throw InvalidArgument("eval_interval must be >= 1");
    if (!(init_jitter >= 0)) throw InvalidArgument("init_jitter must be >= 0");
    if (n_points < 1) throw InvalidArgument("n_points must be >= 1");
    controller.validate();
    weights.validate();
  }
};

struct TrainLogRow {
  std::int64_t iter = 0;
  LossBreakdown parts;
  double psnr = 0;
};

struct Checkpoint {
  Model model;
  ClassifierWeights classifier;
  WaterProfile profile;
  std::int64_t iteration = 0;

  bool operator==(const Checkpoint&) const = default;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
  std::vector<double> totals;  // l_total per iteration
  std::optional<std::string> diverged;
};

/// Starting model: seed points with optional jitter, uniform gray colors,
/// default physics.
inline Model initial_model(const GaussianCloud& points, const TrainConfig& cfg) {
  Model m;
  m.gaussians = points;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n(0, 1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    GaussianPrimitive g = points.get(i);
    const double j = cfg.init_jitter * std::abs(g.mean[2]);
    for (int k = 0; k < 3; ++k) g.mean[k] += j * n(rng);
    for (int k = 0; k < 3; ++k) g.log_scale[k] += 0.1 * n(rng);
    g.color = {cfg.init_gray, cfg.init_gray, cfg.init_gray};
    g.opacity = 2.0;
    m.gaussians.set(i, g);
  }
  m.atten = AttenuationParams::ocean_default();
  m.scatter = ScatterParams::initialize(cfg.seed);
  return m;
}

/// Seed points back-projected from the views' depth maps, spread over views
/// and pixels by a low-discrepancy sequence; background pixels are skipped.
inline GaussianCloud points_from_depth(const std::vector<Camera>& cams, const std::vector<ScalarField>& depth,
                                       std::size_t n, double d_far) {
  if (cams.empty() || cams.size() != depth.size()) throw InvalidArgument("points_from_depth: cameras and depths differ");
  GaussianCloud out;
  const double a1 = 0.7548776662466927, a2 = 0.5698402909980532;
  const std::size_t max_tries = 50 * n + 1000;
  for (std::size_t i = 0; out.size() < n && i < max_tries; ++i) {
    const std::size_t v = i % cams.size();
    const Camera& cam = cams[v];
    const ScalarField& d = depth[v];
    require_same_dims(d, ScalarField(cam.width, cam.height), "points_from_depth");
    const std::size_t j = i / cams.size() + 1;
    const int x = std::min(cam.width - 1, static_cast<int>(std::fmod(0.5 + a1 * j, 1.0) * cam.width));
    const int y = std::min(cam.height - 1, static_cast<int>(std::fmod(0.5 + a2 * j, 1.0) * cam.height));
    const double z = d.at(x, y);
    if (!(z > 0) || z >= d_far - 1e-6) continue;
    const Vec3 pc{(x - cam.cx) / cam.fx * z, (y - cam.cy) / cam.fy * z, z};
    const Vec3 t{pc[0] - cam.translation[0], pc[1] - cam.translation[1], pc[2] - cam.translation[2]};
    GaussianPrimitive g;
    g.mean = mat_vec(transpose(cam.rotation), t);
    const double s = z / cam.fx * 0.8 * std::sqrt(static_cast<double>(cam.width) * cam.height / n);
    g.log_scale = {std::log(s), std::log(s), std::log(0.3 * s)};
    g.rotation = {1, 0, 0, 0};
    out.push_back(g);
  }
  if (out.size() == 0) throw InvalidArgument("points_from_depth: no foreground depth");
  return out;
}

inline ObjectiveSettings objective_settings(const TrainConfig& cfg, const WaterProfile& profile, bool physics) {
  ObjectiveSettings s;
  s.raster = cfg.raster;
  s.weights = cfg.weights;
  s.scatter = cfg.scatter;
  s.physics = physics;
  s.detach_depth = cfg.detach_depth;
  s.water_index = profile.w;
  s.t_mod = profile.t_mod();
  return s;
}

inline SlotLr gaussian_lrs(const GaussianLrs& g) {
  return [g](std::string_view slot) {
    if (slot == "gauss.mean") return g.position;
    if (slot == "gauss.color") return g.color;
    if (slot == "gauss.opacity") return g.opacity;
    if (slot == "gauss.log_scale") return g.scale;
    if (slot == "gauss.rotation") return g.rotation;
    throw InvalidArgument("no learning rate for slot '" + std::string(slot) + "'");
  };
}

/// Mean PSNR of the composite against the targets over all views.
inline double mean_view_psnr(const Model& m, const std::vector<Camera>& cams, const std::vector<ColorField>& targets,
                             const ObjectiveSettings& s) {
  double acc = 0;
  for (std::size_t v = 0; v < cams.size(); ++v)
    acc += psnr(evaluate_objective(m, m, cams[v], targets[v], s).composite, targets[v]);
  return acc / static_cast<double>(cams.size());
}

/// Two-phase training: geometry only until the water path is enabled, then the
/// full objective on all parameter groups under the controller's schedule.
/// One view per iteration, in order.
inline TrainResult train(const std::vector<Camera>& cams, const std::vector<ColorField>& images,
                         const GaussianCloud& init_points, const TrainConfig& cfg,
                         const ClassifierWeights& cw) {
  cfg.validate();
  if (cams.size() < 2 || cams.size() != images.size()) throw InvalidArgument("train needs >= 2 views with images");
  TrainResult out;
  Checkpoint& ck = out.checkpoint;
  ck.model = initial_model(init_points, cfg);
  ck.classifier = cw;
  ck.profile = classify_views(images, cw);
  ParamVector pg = pack(ck.model.gaussians), pa = pack(ck.model.atten), ps = pack(ck.model.scatter);
  AdamState sg(pg), sa(pa), ss(ps);
  Model grad;
  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    const TrainingSchedule sched = controller(ck.profile, it, cfg.iterations, cfg.controller, cfg.weights);
    const std::size_t v = static_cast<std::size_t>(it) % cams.size();
    const ObjectiveSettings s = objective_settings(cfg, ck.profile, sched.water_path_enabled);
    try {
      const ObjectiveResult res = evaluate_objective(ck.model, ck.model, cams[v], images[v], s, &grad);
      out.totals.push_back(res.parts.total);
      if (it % cfg.eval_interval == 0 || it + 1 == cfg.iterations)
        out.log.push_back({it, res.parts, psnr(res.composite, images[v])});
      adam_step(pg, pack(grad.gaussians), sg, gaussian_lrs(sched.lr_gaussians));
      if (sched.water_path_enabled) {
        adam_step(pa, pack(grad.atten), sa, sched.lr_attenuation);
        adam_step(ps, pack(grad.scatter), ss, sched.lr_scattering);
      }
    } catch (const DivergedError& e) {
      out.diverged = std::string(e.what()) + " at iteration " + std::to_string(it);
      return out;
    }
    unpack(pg, ck.model.gaussians);
    unpack(pa, ck.model.atten);
    unpack(ps, ck.model.scatter);
    ck.model.gaussians.project_constraints();
    ck.model.atten.project_constraints();
    ck.model.scatter.project_constraints();
    pg = pack(ck.model.gaussians);
    pa = pack(ck.model.atten);
    ps = pack(ck.model.scatter);
    ck.iteration = it + 1;
  }
  return out;
}

inline TrainResult train(const SceneBundle& bundle, const TrainConfig& cfg, const ClassifierWeights& cw) {
  const GaussianCloud init = points_from_depth(bundle.cameras, bundle.depth, cfg.n_points, cfg.raster.d_far);
  return train(bundle.cameras, bundle.degraded, init, cfg, cw);
}

}  // namespace dpgs
