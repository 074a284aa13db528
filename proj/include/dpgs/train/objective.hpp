#pragma once

#include <span>
#include <string_view>

#include "dpgs/diff/param_vector.hpp"
#include "dpgs/losses/losses.hpp"
#include "dpgs/physics/attenuation.hpp"
#include "dpgs/physics/scattering.hpp"
#include "dpgs/render/rasterizer.hpp"

namespace dpgs {

/// Everything that is optimized: Gaussians plus the two physics branches.
struct Model {
  GaussianCloud gaussians;
  AttenuationParams atten = AttenuationParams::ocean_default();
  ScatterParams scatter = ScatterParams::initialize(0);

  bool operator==(const Model&) const = default;

  template <class Fn>
  friend void visit_slots(Model& m, Fn&& fn) {
    visit_slots(m.gaussians, fn);
    visit_slots(m.atten, fn);
    visit_slots(m.scatter, fn);
  }
};

/// Same shape as `m`, all slots zero.
inline Model zero_like(const Model& m) {
  Model z = m;
  visit_slots(z, [](std::string_view, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });
  return z;
}

struct ObjectiveSettings {
  RasterSettings raster{};
  LossWeights weights{};
  ScatterOptions scatter{};
  bool physics = true;        // false: geometry-only phase, l_basic(J, I)
  bool detach_depth = false;  // physics sees a gradient-stopped D
  double water_index = 0.5;
  double t_mod = 1.0;
};

struct ObjectiveResult {
  LossBreakdown parts;
  RenderOutput render;
  ColorField composite;  // I_hat (or J in the geometry-only phase)
  ColorField attenuation;
  ScatterResult scatter;
  ColorField att_in, sca_in;  // inputs of the path-isolated reconstruction terms
};

/// Evaluates the training objective for one view. Gradient-stopped quantities
/// (edge factors, edge-aware weights, the frozen path of each Eq.-10 term, and
/// D when detach_depth is set) are evaluated at `anchor`; pass the same object
/// for both during training. When `grad` is non-null it receives dL/dmodel.
inline ObjectiveResult evaluate_objective(const Model& m, const Model& anchor, const Camera& cam,
                                          const ColorField& target, const ObjectiveSettings& s,
                                          Model* grad = nullptr) {
  const LossWeights& lw = s.weights;
  ObjectiveResult res;
  res.render = rasterize(m.gaussians, cam, s.raster);
  const RenderOutput& r = res.render;
  require_same_dims(r.color, target, "evaluate_objective");

  if (!s.physics) {
    res.composite = r.color;
    res.parts.basic = l_basic(r.color, target, lw.lambda_d);
    res.parts.total = res.parts.basic;
    if (!std::isfinite(res.parts.total)) throw DivergedError("non-finite loss term 'basic'", "objective");
    if (grad) {
      *grad = zero_like(m);
      const ColorField gj = l_basic_grad(r.color, target, lw.lambda_d);
      grad->gaussians = rasterize_backward(m.gaussians, cam, s.raster, gj,
                                           ScalarField(cam.width, cam.height),
                                           ScalarField(cam.width, cam.height));
    }
    return res;
  }

  const bool at_anchor = &m == &anchor;
  const RenderOutput ra = at_anchor ? r : rasterize(anchor.gaussians, cam, s.raster);
  const ScalarField& d = s.detach_depth ? ra.depth : r.depth;
  const ScalarField e = edge_factor(target, ra.depth);
  const ScalarField ed = depth_edge(ra.depth);
  const EdgeWeights ew = edge_weights(ra.depth, lw.alpha_s);

  res.attenuation = attenuation_map(d, e, m.atten, s.t_mod);
  res.scatter = scattering_map(d, m.scatter, s.scatter, &ed);
  const ColorField& a = res.attenuation;
  const ScatterResult& sc = res.scatter;
  const std::size_t n = d.size();
  const int w = cam.width, h = cam.height;

  ColorField ja(w, h);
  for (std::size_t i = 0; i < ja.size(); ++i) ja[i] = r.color[i] * a[i];
  res.composite = ja;
  for (std::size_t i = 0; i < ja.size(); ++i) res.composite[i] += sc.b[i];

  // Frozen halves of the path-isolated reconstruction terms.
  ColorField ja_anchor = ja, b_anchor = sc.b;
  if (!at_anchor) {
    const ScalarField& da = ra.depth;
    const ColorField aa = attenuation_map(da, e, anchor.atten, s.t_mod);
    const ScatterResult sa = scattering_map(da, anchor.scatter, s.scatter, &ed);
    for (std::size_t i = 0; i < ja.size(); ++i) ja_anchor[i] = ra.color[i] * aa[i];
    b_anchor = sa.b;
  }
  ColorField att_in = ja, sca_in = ja_anchor;
  for (std::size_t i = 0; i < ja.size(); ++i) {
    att_in[i] += b_anchor[i];
    sca_in[i] += sc.b[i];
  }

  res.att_in = att_in;
  res.sca_in = sca_in;
  const ScalarField abar = channel_mean(a);
  auto& p = res.parts;
  p.basic = l_basic(res.composite, target, lw.lambda_d);
  p.att = l_basic(att_in, target, lw.lambda_d);
  p.sca = l_basic(sca_in, target, lw.lambda_d);
  p.ab = l_ab(sc.bs, abar, d, abar, lw.mu, s.raster.d_far);
  p.wat = l_wat(p.att, p.sca, p.ab, s.water_index, lw);
  p.edge = l_edge(sc.bs, ew, lw.lambda_edge);
  p.ms = l_ms(res.composite, target, lw.lambda_ms);
  p.total = l_total(p, lw);
  if (!grad) return res;

  const auto wc = wat_coefficients(s.water_index, lw);
  ColorField g_i = l_basic_grad(res.composite, target, lw.lambda_d, lw.w1);
  const ColorField g_ms = l_ms_grad(res.composite, target, lw.lambda_ms, lw.w5);
  const ColorField g_att = l_basic_grad(att_in, target, lw.lambda_d, lw.w3 * wc.alpha);
  const ColorField g_sca = l_basic_grad(sca_in, target, lw.lambda_d, lw.w3 * wc.beta);
  for (std::size_t i = 0; i < g_i.size(); ++i) g_i[i] += g_ms[i];
  ColorField g_ja = g_i, g_b = g_i;
  for (std::size_t i = 0; i < g_i.size(); ++i) {
    g_ja[i] += g_att[i];
    g_b[i] += g_sca[i];
  }

  const LabGrad lab = l_ab_grad(sc.bs, abar, d, abar, lw.mu, s.raster.d_far, lw.w2 + lw.w3 * lw.gamma_wat);
  ScalarField g_bs = l_edge_grad(sc.bs, ew, lw.lambda_edge, lw.w4);
  for (std::size_t i = 0; i < n; ++i) g_bs[i] += lab.bs[i];

  ColorField g_j(w, h), g_a(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    const double g_abar = (lab.abar[i] + lab.t_map[i]) / 3.0;
    for (int c = 0; c < 3; ++c) {
      const std::size_t k = 3 * i + c;
      g_j[k] = g_ja[k] * a[k];
      g_a[k] = g_ja[k] * r.color[k] + g_abar;
    }
  }

  const AttenuationGrad ag = attenuation_map_backward(d, e, m.atten, s.t_mod, a, g_a);
  const ScatterGrad sg = scattering_map_backward(d, m.scatter, s.scatter, sc, g_b, g_bs);
  ScalarField g_d(w, h);
  if (!s.detach_depth)
    for (std::size_t i = 0; i < n; ++i) g_d[i] = lab.depth[i] + ag.depth[i] + sg.depth[i];

  grad->gaussians = rasterize_backward(m.gaussians, cam, s.raster, g_j, g_d, ScalarField(w, h));
  grad->atten = ag.params;
  grad->scatter = sg.params;
  return res;
}

/// Smallest distance to a non-differentiable point of the objective at `m`:
/// renderer cutoffs, ReLU/max switches, and the |.| kinks of the L1 and
/// edge terms. Used to screen gradient-check fixtures.
inline double objective_kink_margin(const Model& m, const Camera& cam, const ColorField& target,
                                    const ObjectiveSettings& s) {
  double margin = raster_margin(m.gaussians, cam, s.raster);
  const ObjectiveResult res = evaluate_objective(m, m, cam, target, s);
  auto l1_margin = [&](const ColorField& o, const ColorField& t) {
    for (std::size_t i = 0; i < o.size(); ++i) margin = std::min(margin, std::abs(o[i] - t[i]));
  };
  l1_margin(res.composite, target);
  if (!s.physics) return margin;
  for (int f : kMsScales) l1_margin(downsample(res.composite, f), downsample(target, f));
  if (s.scatter.multiscale) margin = std::min(margin, kink_margin(res.scatter.cache));
  const auto [gx, gy] = image_gradients(res.scatter.bs);
  for (std::size_t i = 0; i < gx.size(); ++i)
    margin = std::min({margin, std::abs(gx[i]), std::abs(gy[i])});
  return margin;
}

/// Discrete state of every switch the objective passes through at `m` (with
/// gradient-stopped parts at `anchor`): renderer cutoffs, the network's
/// ReLU/max choices, and the signs inside each L1 and |grad| term.
inline std::vector<int> objective_signature(const Model& m, const Model& anchor, const Camera& cam,
                                            const ColorField& target, const ObjectiveSettings& s) {
  std::vector<int> sig = raster_signature(m.gaussians, cam, s.raster);
  const ObjectiveResult res = evaluate_objective(m, anchor, cam, target, s);
  auto l1_signs = [&](const ColorField& o, const ColorField& t) {
    for (std::size_t i = 0; i < o.size(); ++i) sig.push_back(sign_of(o[i] - t[i]));
  };
  l1_signs(res.composite, target);
  if (!s.physics) return sig;
  l1_signs(res.att_in, target);
  l1_signs(res.sca_in, target);
  for (int f : kMsScales) l1_signs(downsample(res.composite, f), downsample(target, f));
  if (s.scatter.multiscale) {
    const auto k = kink_signature(res.scatter.cache);
    sig.insert(sig.end(), k.begin(), k.end());
  }
  const auto [gx, gy] = image_gradients(res.scatter.bs);
  for (std::size_t i = 0; i < gx.size(); ++i) {
    sig.push_back(sign_of(gx[i]));
    sig.push_back(sign_of(gy[i]));
  }
  return sig;
}

}  // namespace dpgs
