#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "dpgs/core/field.hpp"
#include "dpgs/diff/param_vector.hpp"
#include "dpgs/losses/losses.hpp"
#include "dpgs/synth/scene.hpp"
#include "dpgs/train/adam.hpp"

namespace dpgs {

inline constexpr int kClassifierHidden = 16;
inline constexpr int kWaterClasses = 3;

/// Softmax(W2 ReLU(W1 x + b1) + b2) over x = global mean RGB.
struct ClassifierWeights {
  std::array<double, kClassifierHidden * 3> w1{};  // row j: hidden unit j
  std::array<double, kClassifierHidden> b1{};
  std::array<double, kWaterClasses * kClassifierHidden> w2{};  // row k: class k
  std::array<double, kWaterClasses> b2{};

  bool operator==(const ClassifierWeights&) const = default;

  template <class Fn>
  friend void visit_slots(ClassifierWeights& c, Fn&& fn) {
    fn("cls.b1", std::span<double>(c.b1));
    fn("cls.b2", std::span<double>(c.b2));
    fn("cls.w1", std::span<double>(c.w1));
    fn("cls.w2", std::span<double>(c.w2));
  }

  static ClassifierWeights random(std::uint64_t seed, double scale = 0.5) {
    ClassifierWeights c;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, scale);
    for (double& v : c.w1) v = n(rng);
    for (double& v : c.b1) v = n(rng);
    for (double& v : c.w2) v = n(rng);
    return c;
  }
};

struct WaterProfile {
  std::array<double, kWaterClasses> probs{1.0 / 3, 1.0 / 3, 1.0 / 3};
  double w = 0.5;
  double bg_ratio = 1.0;

  WaterClass argmax() const {
    return static_cast<WaterClass>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  /// Water-type scaling of the attenuation exponent, in (0, 2].
  double t_mod() const { return probs[0] * 1.0 + probs[1] * 1.1 + probs[2] * 1.2; }

  bool operator==(const WaterProfile&) const = default;
};

struct ClassifierCache {
  std::array<double, 3> x{};
  std::array<double, kClassifierHidden> pre{};
  std::array<double, kWaterClasses> probs{};
};

inline std::array<double, kWaterClasses> classifier_forward(const std::array<double, 3>& x,
                                                            const ClassifierWeights& cw,
                                                            ClassifierCache* cache = nullptr) {
  ClassifierCache c;
  c.x = x;
  std::array<double, kClassifierHidden> hid{};
  for (int j = 0; j < kClassifierHidden; ++j) {
    double s = cw.b1[j];
    for (int i = 0; i < 3; ++i) s += cw.w1[j * 3 + i] * x[i];
    c.pre[j] = s;
    hid[j] = std::max(s, 0.0);
  }
  std::array<double, kWaterClasses> z{};
  double zmax = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kWaterClasses; ++k) {
    double s = cw.b2[k];
    for (int j = 0; j < kClassifierHidden; ++j) s += cw.w2[k * kClassifierHidden + j] * hid[j];
    z[k] = s;
    zmax = std::max(zmax, s);
  }
  double total = 0;
  for (int k = 0; k < kWaterClasses; ++k) total += (c.probs[k] = std::exp(z[k] - zmax));
  for (double& p : c.probs) p /= total;
  if (cache) *cache = c;
  return c.probs;
}

struct ClassifierGrad {
  ClassifierWeights weights;
  std::array<double, 3> x{};
};

/// Backward of classifier_forward given dL/dprobs.
inline ClassifierGrad classifier_backward(const ClassifierWeights& cw, const ClassifierCache& c,
                                          const std::array<double, kWaterClasses>& g_probs) {
  ClassifierGrad g;
  double dotp = 0;
  for (int k = 0; k < kWaterClasses; ++k) dotp += g_probs[k] * c.probs[k];
  std::array<double, kWaterClasses> gz{};
  for (int k = 0; k < kWaterClasses; ++k) gz[k] = c.probs[k] * (g_probs[k] - dotp);
  std::array<double, kClassifierHidden> gh{};
  for (int k = 0; k < kWaterClasses; ++k) {
    g.weights.b2[k] = gz[k];
    for (int j = 0; j < kClassifierHidden; ++j) {
      g.weights.w2[k * kClassifierHidden + j] = gz[k] * std::max(c.pre[j], 0.0);
      gh[j] += gz[k] * cw.w2[k * kClassifierHidden + j];
    }
  }
  for (int j = 0; j < kClassifierHidden; ++j) {
    const double gp = c.pre[j] > 0 ? gh[j] : 0.0;
    g.weights.b1[j] = gp;
    for (int i = 0; i < 3; ++i) {
      g.weights.w1[j * 3 + i] = gp * c.x[i];
      g.x[i] += gp * cw.w1[j * 3 + i];
    }
  }
  return g;
}

inline double blue_green_ratio(const std::array<double, 3>& means) {
  return means[2] / std::max(means[1], 1e-8);
}

inline WaterProfile classify_water(const ColorField& image, const ClassifierWeights& cw) {
  if (image.empty()) throw InvalidArgument("classify_water: empty image");
  const auto means = channel_means(image);
  WaterProfile p;
  p.probs = classifier_forward(means, cw);
  p.w = 0.5 * p.probs[1] + 1.0 * p.probs[2];
  p.bg_ratio = blue_green_ratio(means);
  return p;
}

/// Profile of a multi-view capture: class probabilities averaged over views.
inline WaterProfile classify_views(const std::vector<ColorField>& views, const ClassifierWeights& cw) {
  if (views.empty()) throw InvalidArgument("classify_views: no views");
  WaterProfile out;
  out.probs = {0, 0, 0};
  out.bg_ratio = 0;
  for (const auto& v : views) {
    const WaterProfile p = classify_water(v, cw);
    for (int k = 0; k < kWaterClasses; ++k) out.probs[k] += p.probs[k] / views.size();
    out.bg_ratio += p.bg_ratio / views.size();
  }
  out.w = 0.5 * out.probs[1] + out.probs[2];
  return out;
}

struct HeuristicRange {
  double r_lo = 0.8, r_hi = 1.3;
};

/// Water index from the blue/green ratio: high ratio (clear) -> 0.
inline double water_index_heuristic(const ColorField& image, HeuristicRange r = {}) {
  const auto means = channel_means(image);
  if (!(means[1] > 0)) throw InvalidArgument("water_index_heuristic: mean green must be positive");
  return std::clamp((r.r_hi - blue_green_ratio(means)) / (r.r_hi - r.r_lo), 0.0, 1.0);
}

/// Class implied by a scalar index: thirds of [0, 1].
inline WaterClass class_from_index(double w) {
  if (w < 1.0 / 3) return WaterClass::clear;
  if (w > 2.0 / 3) return WaterClass::turbid;
  return WaterClass::medium;
}

/// Multinomial cross-entropy fit of the classifier on a labeled corpus.
inline ClassifierWeights fit_classifier(const std::vector<LabeledImage>& corpus, std::uint64_t seed,
                                        int iterations = 1500, double lr = 0.02) {
  if (corpus.empty()) throw InvalidArgument("fit_classifier: empty corpus");
  std::vector<std::array<double, 3>> feats;
  for (const auto& s : corpus) feats.push_back(channel_means(s.image));
  ClassifierWeights cw = ClassifierWeights::random(seed);
  ParamVector params = pack(cw);
  AdamState st(params);
  for (int it = 0; it < iterations; ++it) {
    unpack(params, cw);
    ParamVector grads = params.zeros_like();
    for (std::size_t n = 0; n < corpus.size(); ++n) {
      ClassifierCache cache;
      classifier_forward(feats[n], cw, &cache);
      std::array<double, kWaterClasses> gp{};
      const int label = static_cast<int>(corpus[n].label);
      gp[label] = -1.0 / std::max(cache.probs[label], 1e-300) / corpus.size();
      accumulate_into(grads, classifier_backward(cw, cache, gp).weights);
    }
    adam_step(params, grads, st, lr);
  }
  unpack(params, cw);
  return cw;
}

/// Default weights: fit on the built-in tinted corpus.
inline ClassifierWeights default_classifier() {
  static const ClassifierWeights cw = fit_classifier(tinted_corpus(7, 64), 11);
  return cw;
}

struct ControllerConfig {
  double enable_fraction = 1.0 / 3.0;
  double lr_physics_start = 1e-4;
  double lr_physics_end = 5e-5;
  double lr_attenuation_cap = 5e-4;
  double lr_scattering_cap = 1e-4;
  double lr_position = 1.6e-3;
  double lr_color = 2.5e-3;
  double lr_opacity = 0.05;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;

  void validate() const {
    if (!(enable_fraction > 0 && enable_fraction < 1)) throw InvalidArgument("enable_fraction must be in (0, 1)");
    for (double v : {lr_physics_start, lr_physics_end, lr_attenuation_cap, lr_scattering_cap, lr_position,
                     lr_color, lr_opacity, lr_scale, lr_rotation})
      if (!(v > 0) || !std::isfinite(v)) throw InvalidArgument("learning rates must be positive");
  }
};

struct GaussianLrs {
  double position, color, opacity, scale, rotation;
};

struct TrainingSchedule {
  GaussianLrs lr_gaussians{};
  double lr_attenuation = 0, lr_scattering = 0;
  double alpha = 1, beta = 1;
  bool water_path_enabled = false;
};

inline std::int64_t enable_iteration(std::int64_t total, const ControllerConfig& cfg) {
  return static_cast<std::int64_t>(std::ceil(cfg.enable_fraction * static_cast<double>(total) - 1e-9));
}

/// Learning rates and Eq.-10 coefficients for one iteration.
inline TrainingSchedule controller(const WaterProfile& profile, std::int64_t iter, std::int64_t total,
                                   const ControllerConfig& cfg, const LossWeights& lw = {}) {
  if (iter < 0 || iter >= total) throw InvalidArgument("controller: iteration outside [0, total)");
  TrainingSchedule s;
  s.lr_gaussians = {cfg.lr_position, cfg.lr_color, cfg.lr_opacity, cfg.lr_scale, cfg.lr_rotation};
  const auto wc = wat_coefficients(profile.w, lw);
  s.alpha = wc.alpha;
  s.beta = wc.beta;
  const std::int64_t start = enable_iteration(total, cfg);
  s.water_path_enabled = iter >= start;
  if (!s.water_path_enabled) return s;
  const std::int64_t last = total - 1;
  const double progress = last > start ? static_cast<double>(iter - start) / static_cast<double>(last - start) : 1.0;
  const double clear_lr = cfg.lr_physics_start + (cfg.lr_physics_end - cfg.lr_physics_start) * progress;
  const double turbid_lr = cfg.lr_physics_start;
  double lr = 0;
  switch (profile.argmax()) {
    case WaterClass::clear: lr = clear_lr; break;
    case WaterClass::turbid: lr = turbid_lr; break;
    case WaterClass::medium: {
      const double t = std::clamp(profile.w, 0.0, 1.0);
      lr = (1 - t) * clear_lr + t * turbid_lr;
      break;
    }
  }
  s.lr_attenuation = std::min(lr, cfg.lr_attenuation_cap);
  s.lr_scattering = std::min(lr, cfg.lr_scattering_cap);
  return s;
}

}  // namespace dpgs
