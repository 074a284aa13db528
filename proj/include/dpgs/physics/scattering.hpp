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
#include "dpgs/core/filter.hpp"
#include "dpgs/core/math.hpp"
#include "dpgs/core/sampling.hpp"
#include "dpgs/physics/attenuation.hpp"

namespace dpgs {

inline constexpr int kBranches = 3;
inline constexpr int kBranchChannels = 4;
inline constexpr int kFeatureChannels = kBranches * kBranchChannels;
inline constexpr int kAttentionHidden = 2;
inline constexpr std::array<int, kBranches> kBranchScales{1, 2, 4};

/// Backscatter parameters plus the weights of the multi-scale depth network.
struct ScatterParams {
  std::array<double, 3> binf_raw{};  ///< B_inf = sigmoid(binf_raw)
  std::array<double, 1> theta_b{};   ///< b = softplus(theta_b)
  std::array<double, 1> lambda{0.5};
  std::array<double, 1> delta{0.05};
  // Branch k, output o: 3x3 kernel at branch_w[(k*4 + o)*9].
  std::array<double, kFeatureChannels * 9> branch_w{};
  std::array<double, kFeatureChannels> branch_b{};
  // Channel attention MLP 4 -> 2 -> 4, shared across branch groups.
  std::array<double, kAttentionHidden * kBranchChannels> ca_w1{};
  std::array<double, kAttentionHidden> ca_b1{};
  std::array<double, kBranchChannels * kAttentionHidden> ca_w2{};
  std::array<double, kBranchChannels> ca_b2{};
  // Spatial attention: 3x3 kernels over (mean, max).
  std::array<double, 18> sa_w{};
  std::array<double, 1> sa_b{};
  // 1x1 fusion 12 -> 1.
  std::array<double, kFeatureChannels> fuse_w{};
  std::array<double, 1> fuse_b{};

  /// Network weights uniform(-0.1, 0.1) from `seed`; biases zero.
  static ScatterParams initialize(std::uint64_t seed, std::array<double, 3> binf = {0.2, 0.4, 0.5},
                                  double b = 0.05) {
    ScatterParams p;
    for (int c = 0; c < 3; ++c) p.binf_raw[c] = logit(binf[c]);
    p.theta_b[0] = inverse_softplus(b);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (double& v : p.branch_w) v = u(rng);
    for (double& v : p.ca_w1) v = u(rng);
    for (double& v : p.ca_w2) v = u(rng);
    for (double& v : p.sa_w) v = u(rng);
    for (double& v : p.fuse_w) v = u(rng);
    return p;
  }

  std::array<double, 3> binf() const {
    return {sigmoid(binf_raw[0]), sigmoid(binf_raw[1]), sigmoid(binf_raw[2])};
  }
  double b() const { return softplus(theta_b[0]); }

  void project_constraints() {
    lambda[0] = std::clamp(lambda[0], 0.0, 1.0);
    delta[0] = std::max(delta[0], 0.0);
  }

  /// Same shape, every entry zero (gradient container).
  static ScatterParams zeros() {
    ScatterParams z;
    z.lambda[0] = 0;
    z.delta[0] = 0;
    return z;
  }

  template <class Fn>
  friend void visit_slots(ScatterParams& p, Fn&& fn) {
    fn("scatter.binf_raw", std::span<double>(p.binf_raw));
    fn("scatter.branch_b", std::span<double>(p.branch_b));
    fn("scatter.branch_w", std::span<double>(p.branch_w));
    fn("scatter.ca_b1", std::span<double>(p.ca_b1));
    fn("scatter.ca_b2", std::span<double>(p.ca_b2));
    fn("scatter.ca_w1", std::span<double>(p.ca_w1));
    fn("scatter.ca_w2", std::span<double>(p.ca_w2));
    fn("scatter.delta", std::span<double>(p.delta));
    fn("scatter.fuse_b", std::span<double>(p.fuse_b));
    fn("scatter.fuse_w", std::span<double>(p.fuse_w));
    fn("scatter.lambda", std::span<double>(p.lambda));
    fn("scatter.sa_b", std::span<double>(p.sa_b));
    fn("scatter.sa_w", std::span<double>(p.sa_w));
    fn("scatter.theta_b", std::span<double>(p.theta_b));
  }

  bool operator==(const ScatterParams&) const = default;
};

struct ScatterOptions {
  /// Confidence bandwidth; +infinity makes C identically 1.
  double sigma_c = 1.0;
  /// When false, M is identically 0 and the network is not evaluated.
  bool multiscale = true;
};

/// Reference homogeneous backscatter B_inf * (1 - exp(-b d)).
inline Vec3 simple_scatter(double d, double b, const Vec3& binf) {
  const double s = 1.0 - std::exp(-b * d);
  return {binf[0] * s, binf[1] * s, binf[2] * s};
}

/// C = exp(-Var_3x3(D) / sigma_c^2), replicate-padded local variance.
inline ScalarField depth_confidence(const ScalarField& depth, double sigma_c) {
  if (depth.width() < 3 || depth.height() < 3) throw InvalidArgument("depth_confidence needs at least 3x3");
  const ScalarField m1 = correlate3x3(depth, kBox3);
  ScalarField sq = depth;
  for (double& v : sq.data()) v *= v;
  const ScalarField m2 = correlate3x3(sq, kBox3);
  ScalarField c(depth.width(), depth.height());
  for (std::size_t i = 0; i < c.size(); ++i)
    c[i] = std::exp(-std::max(m2[i] - m1[i] * m1[i], 0.0) / (sigma_c * sigma_c));
  return c;
}

inline ScalarField depth_confidence_backward(const ScalarField& depth, double sigma_c,
                                             const ScalarField& conf, const ScalarField& g_conf) {
  const ScalarField m1 = correlate3x3(depth, kBox3);
  ScalarField sq = depth;
  for (double& v : sq.data()) v *= v;
  const ScalarField m2 = correlate3x3(sq, kBox3);
  ScalarField g_m1(depth.width(), depth.height()), g_m2(depth.width(), depth.height());
  for (std::size_t i = 0; i < conf.size(); ++i) {
    if (m2[i] - m1[i] * m1[i] <= 0) continue;
    const double g_var = -g_conf[i] * conf[i] / (sigma_c * sigma_c);
    g_m2[i] = g_var;
    g_m1[i] = -2.0 * m1[i] * g_var;
  }
  ScalarField g = correlate3x3_adjoint(g_m1, kBox3);
  const ScalarField g2 = correlate3x3_adjoint(g_m2, kBox3);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * depth[i] * g2[i];
  return g;
}

/// Depth edge factor: percentile-normalized Sobel magnitude of D.
inline ScalarField depth_edge(const ScalarField& depth) {
  return normalize_by_p95(sobel_magnitude(depth));
}

/// Intermediate activations of the multi-scale feature network.
struct MultiscaleCache {
  std::array<ScalarField, kBranches> inputs;            // D at each scale
  std::array<ScalarField, kFeatureChannels> pre;        // conv outputs (branch resolution)
  std::array<ScalarField, kFeatureChannels> x;          // upsampled ReLU features
  std::array<std::array<double, kBranchChannels>, kBranches> pooled{};
  std::array<std::array<double, kAttentionHidden>, kBranches> hidden_pre{};
  std::array<std::array<double, kBranchChannels>, kBranches> ca{};
  std::array<ScalarField, kFeatureChannels> y;          // channel-attended
  ScalarField mean_map, max_map, s_att;
  std::vector<int> argmax;
  std::array<ScalarField, kFeatureChannels> z;          // spatially attended
  ScalarField m;
};

namespace detail {
inline Kernel3 kernel_at(std::span<const double> w, std::size_t offset) {
  Kernel3 k;
  std::copy_n(w.begin() + offset, 9, k.begin());
  return k;
}
}  // namespace detail

/// Multi-scale feature map M(D) in (0, 1): three conv branches at full, 1/2
/// and 1/4 resolution, channel attention per branch group, spatial attention
/// over the concatenation, then a 1x1 fusion and sigmoid.
inline ScalarField multiscale_features(const ScalarField& depth, const ScatterParams& p,
                                       MultiscaleCache* cache_out = nullptr) {
  if (depth.width() < 8 || depth.height() < 8)
    throw InvalidArgument("multiscale_features needs at least 8x8 input");
  const int w = depth.width(), h = depth.height();
  MultiscaleCache cache;
  for (int k = 0; k < kBranches; ++k) {
    const int s = kBranchScales[k];
    cache.inputs[k] = s == 1 ? depth : downsample(depth, s);
    for (int o = 0; o < kBranchChannels; ++o) {
      const int c = k * kBranchChannels + o;
      ScalarField pre = correlate3x3(cache.inputs[k], detail::kernel_at(p.branch_w, c * 9));
      for (double& v : pre.data()) v += p.branch_b[c];
      ScalarField act = pre;
      for (double& v : act.data()) v = std::max(v, 0.0);
      cache.x[c] = s == 1 ? std::move(act) : upsample(act, s, w, h);
      cache.pre[c] = std::move(pre);
    }
  }
  for (int k = 0; k < kBranches; ++k) {
    for (int o = 0; o < kBranchChannels; ++o) cache.pooled[k][o] = mean(cache.x[k * kBranchChannels + o]);
    std::array<double, kAttentionHidden> hid{};
    for (int j = 0; j < kAttentionHidden; ++j) {
      double s = p.ca_b1[j];
      for (int o = 0; o < kBranchChannels; ++o) s += p.ca_w1[j * kBranchChannels + o] * cache.pooled[k][o];
      cache.hidden_pre[k][j] = s;
      hid[j] = std::max(s, 0.0);
    }
    for (int o = 0; o < kBranchChannels; ++o) {
      double s = p.ca_b2[o];
      for (int j = 0; j < kAttentionHidden; ++j) s += p.ca_w2[o * kAttentionHidden + j] * hid[j];
      cache.ca[k][o] = sigmoid(s);
    }
    for (int o = 0; o < kBranchChannels; ++o) {
      const int c = k * kBranchChannels + o;
      cache.y[c] = cache.x[c];
      for (double& v : cache.y[c].data()) v *= cache.ca[k][o];
    }
  }
  cache.mean_map = ScalarField(w, h);
  cache.max_map = ScalarField(w, h);
  cache.argmax.assign(static_cast<std::size_t>(w) * h, 0);
  for (std::size_t i = 0; i < cache.mean_map.size(); ++i) {
    double s = 0, best = cache.y[0][i];
    int arg = 0;
    for (int c = 0; c < kFeatureChannels; ++c) {
      s += cache.y[c][i];
      if (cache.y[c][i] > best) {
        best = cache.y[c][i];
        arg = c;
      }
    }
    cache.mean_map[i] = s / kFeatureChannels;
    cache.max_map[i] = best;
    cache.argmax[i] = arg;
  }
  ScalarField s_pre = correlate3x3(cache.mean_map, detail::kernel_at(p.sa_w, 0));
  const ScalarField s_max = correlate3x3(cache.max_map, detail::kernel_at(p.sa_w, 9));
  cache.s_att = ScalarField(w, h);
  for (std::size_t i = 0; i < s_pre.size(); ++i) cache.s_att[i] = sigmoid(s_pre[i] + s_max[i] + p.sa_b[0]);
  cache.m = ScalarField(w, h);
  for (int c = 0; c < kFeatureChannels; ++c) {
    cache.z[c] = cache.y[c];
    for (std::size_t i = 0; i < cache.z[c].size(); ++i) cache.z[c][i] *= cache.s_att[i];
  }
  for (std::size_t i = 0; i < cache.m.size(); ++i) {
    double f = p.fuse_b[0];
    for (int c = 0; c < kFeatureChannels; ++c) f += p.fuse_w[c] * cache.z[c][i];
    cache.m[i] = sigmoid(f);
  }
  ScalarField m = cache.m;
  if (cache_out) *cache_out = std::move(cache);
  return m;
}

/// Distance of the nearest ReLU or max switch from its threshold. Central
/// differences are only meaningful when this exceeds the probe perturbation.
inline double kink_margin(const MultiscaleCache& cache) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& pre : cache.pre)
    for (double v : pre.data()) m = std::min(m, std::abs(v));
  for (const auto& hp : cache.hidden_pre)
    for (double v : hp) m = std::min(m, std::abs(v));
  for (std::size_t i = 0; i < cache.max_map.size(); ++i) {
    const double top = cache.max_map[i];
    if (top <= 0) continue;
    for (int c = 0; c < kFeatureChannels; ++c)
      if (c != cache.argmax[i]) m = std::min(m, top - cache.y[c][i]);
  }
  return m;
}

inline int sign_of(double v) { return (v > 0) - (v < 0); }

/// Discrete state of every ReLU and max switch (see kink_margin).
inline std::vector<int> kink_signature(const MultiscaleCache& cache) {
  std::vector<int> sig;
  for (const auto& pre : cache.pre)
    for (double v : pre.data()) sig.push_back(sign_of(v));
  for (const auto& hp : cache.hidden_pre)
    for (double v : hp) sig.push_back(sign_of(v));
  sig.insert(sig.end(), cache.argmax.begin(), cache.argmax.end());
  return sig;
}

struct MultiscaleGrad {
  ScalarField depth;
  ScatterParams params = ScatterParams::zeros();
};

/// Backward pass of multiscale_features given dL/dM; fills only network slots.
inline MultiscaleGrad multiscale_features_backward(const ScalarField& depth, const ScatterParams& p,
                                                   const MultiscaleCache& cache,
                                                   const ScalarField& g_m) {
  const int w = depth.width(), h = depth.height();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  MultiscaleGrad out{ScalarField(w, h)};
  auto& gp = out.params;

  ScalarField g_f(w, h);
  for (std::size_t i = 0; i < n; ++i) g_f[i] = g_m[i] * cache.m[i] * (1.0 - cache.m[i]);
  gp.fuse_b[0] = pairwise_sum(g_f.data());
  std::array<ScalarField, kFeatureChannels> g_y;
  ScalarField g_s(w, h);
  for (int c = 0; c < kFeatureChannels; ++c) {
    double gw = 0;
    g_y[c] = ScalarField(w, h);
    for (std::size_t i = 0; i < n; ++i) {
      gw += g_f[i] * cache.z[c][i];
      const double g_z = g_f[i] * p.fuse_w[c];
      g_y[c][i] = g_z * cache.s_att[i];
      g_s[i] += g_z * cache.y[c][i];
    }
    gp.fuse_w[c] = gw;
  }
  ScalarField g_spre(w, h);
  for (std::size_t i = 0; i < n; ++i) g_spre[i] = g_s[i] * cache.s_att[i] * (1.0 - cache.s_att[i]);
  gp.sa_b[0] = pairwise_sum(g_spre.data());
  const Kernel3 gk_mean = correlate3x3_kernel_grad(cache.mean_map, g_spre);
  const Kernel3 gk_max = correlate3x3_kernel_grad(cache.max_map, g_spre);
  std::copy(gk_mean.begin(), gk_mean.end(), gp.sa_w.begin());
  std::copy(gk_max.begin(), gk_max.end(), gp.sa_w.begin() + 9);
  const ScalarField g_mean = correlate3x3_adjoint(g_spre, detail::kernel_at(p.sa_w, 0));
  const ScalarField g_max = correlate3x3_adjoint(g_spre, detail::kernel_at(p.sa_w, 9));
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < kFeatureChannels; ++c) g_y[c][i] += g_mean[i] / kFeatureChannels;
    g_y[cache.argmax[i]][i] += g_max[i];
  }

  std::array<ScalarField, kFeatureChannels> g_x;
  for (int k = 0; k < kBranches; ++k) {
    std::array<double, kBranchChannels> g_ca{}, g_pool{};
    for (int o = 0; o < kBranchChannels; ++o) {
      const int c = k * kBranchChannels + o;
      g_x[c] = ScalarField(w, h);
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        s += g_y[c][i] * cache.x[c][i];
        g_x[c][i] = g_y[c][i] * cache.ca[k][o];
      }
      g_ca[o] = s;
    }
    std::array<double, kAttentionHidden> hid{}, g_hid{};
    for (int j = 0; j < kAttentionHidden; ++j) hid[j] = std::max(cache.hidden_pre[k][j], 0.0);
    for (int o = 0; o < kBranchChannels; ++o) {
      const double g_pre2 = g_ca[o] * cache.ca[k][o] * (1.0 - cache.ca[k][o]);
      gp.ca_b2[o] += g_pre2;
      for (int j = 0; j < kAttentionHidden; ++j) {
        gp.ca_w2[o * kAttentionHidden + j] += g_pre2 * hid[j];
        g_hid[j] += g_pre2 * p.ca_w2[o * kAttentionHidden + j];
      }
    }
    for (int j = 0; j < kAttentionHidden; ++j) {
      const double g_pre1 = cache.hidden_pre[k][j] > 0 ? g_hid[j] : 0.0;
      gp.ca_b1[j] += g_pre1;
      for (int o = 0; o < kBranchChannels; ++o) {
        gp.ca_w1[j * kBranchChannels + o] += g_pre1 * cache.pooled[k][o];
        g_pool[o] += g_pre1 * p.ca_w1[j * kBranchChannels + o];
      }
    }
    for (int o = 0; o < kBranchChannels; ++o) {
      const int c = k * kBranchChannels + o;
      const double share = g_pool[o] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) g_x[c][i] += share;
    }
  }

  for (int k = 0; k < kBranches; ++k) {
    const int s = kBranchScales[k];
    const ScalarField& in = cache.inputs[k];
    ScalarField g_in(in.width(), in.height());
    for (int o = 0; o < kBranchChannels; ++o) {
      const int c = k * kBranchChannels + o;
      ScalarField g_act = s == 1 ? g_x[c] : upsample_adjoint(g_x[c], s, in.width(), in.height());
      for (std::size_t i = 0; i < g_act.size(); ++i)
        if (cache.pre[c][i] <= 0) g_act[i] = 0.0;
      gp.branch_b[c] = pairwise_sum(g_act.data());
      const Kernel3 gk = correlate3x3_kernel_grad(in, g_act);
      std::copy(gk.begin(), gk.end(), gp.branch_w.begin() + c * 9);
      correlate3x3_adjoint_accumulate(g_act, detail::kernel_at(p.branch_w, c * 9), g_in);
    }
    const ScalarField g_d = s == 1 ? g_in : downsample_adjoint(g_in, s, w, h);
    for (std::size_t i = 0; i < n; ++i) out.depth[i] += g_d[i];
  }
  return out;
}

/// Backscatter map and its channel-free opacity.
struct ScatterResult {
  ColorField b;
  ScalarField bs;   ///< 1 - exp(-tau)
  ScalarField tau;  ///< optical depth
  ScalarField confidence, edge, m;
  MultiscaleCache cache;
};

/// tau = b * D * C(D) * (1 - lambda * E_d(D)) * (1 + delta * M(D) * D);
/// B_c = B_inf_c * (1 - exp(-tau)). `edge` supplies a gradient-stopped E_d;
/// when null it is computed from `depth`.
inline ScatterResult scattering_map(const ScalarField& depth, const ScatterParams& p,
                                    const ScatterOptions& opt = {},
                                    const ScalarField* edge = nullptr) {
  const int w = depth.width(), h = depth.height();
  ScatterResult r;
  r.confidence = std::isinf(opt.sigma_c) ? ScalarField(w, h, 1.0) : depth_confidence(depth, opt.sigma_c);
  r.edge = edge ? *edge : depth_edge(depth);
  require_same_dims(depth, r.edge, "scattering_map");
  r.m = opt.multiscale ? multiscale_features(depth, p, &r.cache) : ScalarField(w, h, 0.0);
  const double b = p.b(), lam = p.lambda[0], del = p.delta[0];
  const auto binf = p.binf();
  r.tau = ScalarField(w, h);
  r.bs = ScalarField(w, h);
  r.b = ColorField(w, h);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth[i] < 0) throw InvalidArgument("scattering_map: negative depth");
    const double d = depth[i];
    r.tau[i] = b * d * r.confidence[i] * (1.0 - lam * r.edge[i]) * (1.0 + del * r.m[i] * d);
    r.bs[i] = 1.0 - std::exp(-r.tau[i]);
    for (int c = 0; c < 3; ++c) r.b[3 * i + c] = binf[c] * r.bs[i];
  }
  return r;
}

struct ScatterGrad {
  ScalarField depth;
  ScatterParams params = ScatterParams::zeros();
};

inline ScatterGrad scattering_map_backward(const ScalarField& depth, const ScatterParams& p,
                                           const ScatterOptions& opt, const ScatterResult& r,
                                           const ColorField& g_b, const ScalarField& g_bs) {
  const int w = depth.width(), h = depth.height();
  const double b = p.b(), lam = p.lambda[0], del = p.delta[0];
  const auto binf = p.binf();
  ScatterGrad out{ScalarField(w, h)};
  ScalarField g_conf(w, h), g_m(w, h);
  std::array<double, 3> g_binf{};
  double g_bcoef = 0, g_lam = 0, g_del = 0;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    double g_s = g_bs[i];
    for (int c = 0; c < 3; ++c) {
      g_s += g_b[3 * i + c] * binf[c];
      g_binf[c] += g_b[3 * i + c] * r.bs[i];
    }
    const double g_tau = g_s * (1.0 - r.bs[i]);
    const double d = depth[i], conf = r.confidence[i], k = 1.0 - lam * r.edge[i];
    const double pm = 1.0 + del * r.m[i] * d;
    g_bcoef += g_tau * d * conf * k * pm;
    g_lam += g_tau * b * d * conf * pm * (-r.edge[i]);
    g_del += g_tau * b * d * conf * k * r.m[i] * d;
    g_m[i] = g_tau * b * d * conf * k * del * d;
    g_conf[i] = g_tau * b * d * k * pm;
    out.depth[i] = g_tau * (b * conf * k * pm + b * d * conf * k * del * r.m[i]);
  }
  if (!std::isinf(opt.sigma_c)) {
    const ScalarField gd = depth_confidence_backward(depth, opt.sigma_c, r.confidence, g_conf);
    for (std::size_t i = 0; i < gd.size(); ++i) out.depth[i] += gd[i];
  }
  if (opt.multiscale) {
    MultiscaleGrad mg = multiscale_features_backward(depth, p, r.cache, g_m);
    for (std::size_t i = 0; i < mg.depth.size(); ++i) out.depth[i] += mg.depth[i];
    out.params = mg.params;
  }
  for (int c = 0; c < 3; ++c) out.params.binf_raw[c] = g_binf[c] * binf[c] * (1.0 - binf[c]);
  out.params.theta_b[0] = g_bcoef * sigmoid(p.theta_b[0]);
  out.params.lambda[0] = g_lam;
  out.params.delta[0] = g_del;
  return out;
}

}  // namespace dpgs
