// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// The mini-train criteria take several minutes on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "dpgs/io/serialize.hpp"
#include "dpgs/train/gradcheck_suite.hpp"
#include "dpgs/train/restore.hpp"
#include "dpgs/train/trainer.hpp"

#ifndef DPGS_CLI_PATH
#error "DPGS_CLI_PATH must name the dpgs executable"
#endif

using namespace dpgs;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// PSNR over pixels whose restore mask is set.
double masked_psnr(const ColorField& a, const ColorField& b, const std::vector<std::uint8_t>& valid) {
  double se = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (!valid[i]) continue;
    for (int c = 0; c < 3; ++c) se += (a[3 * i + c] - b[3 * i + c]) * (a[3 * i + c] - b[3 * i + c]);
    n += 3;
  }
  if (n == 0) return 0;
  const double mse = se / static_cast<double>(n);
  return mse < 1e-10 ? 100.0 : std::min(100.0, 10 * std::log10(1 / mse));
}

Outcome gradient_gate() {
  const auto t0 = Clock::now();
  const GradcheckSuiteResult r = run_gradcheck_suite(GradcheckSettings{});
  const double secs = seconds_since(t0);
  double worst = 0;
  for (const auto& rep : r.reports) worst = std::max(worst, rep.max_rel_error);
  std::string failed;
  for (const auto& f : r.failures) failed += " " + f;
  return {r.passed() && secs < 300,
          fmt("%zu checks, max rel err %.2e, %.1fs%s", r.reports.size(), worst, secs, failed.c_str())};
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_b = 0, worst_a = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const int w = 8 + static_cast<int>(8 * u(rng)), h = 8 + static_cast<int>(8 * u(rng));
    ScalarField d(w, h);
    const double dmax = 0.5 + 20 * u(rng);
    for (double& v : d.data()) v = dmax * u(rng);

    ScatterParams sp = ScatterParams::zeros();
    for (double& v : sp.binf_raw) v = 4 * u(rng) - 2;
    sp.theta_b[0] = 3 * u(rng) - 4;
    const auto binf = sp.binf();
    const ScatterResult sr = scattering_map(d, sp, neutral_scatter_options());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Vec3 ref = simple_scatter(d[i], sp.b(), {binf[0], binf[1], binf[2]});
      for (int c = 0; c < 3; ++c) worst_b = std::max(worst_b, std::abs(sr.b[3 * i + c] - ref[c]));
    }

    AttenuationParams ap;
    for (double& v : ap.theta_beta) v = 3 * u(rng) - 3;
    ap.gamma[0] = u(rng);
    const auto beta = ap.beta();
    // gamma * E = 0 through a zero edge map
    const ColorField a = attenuation_map(d, ScalarField(w, h), ap, 1.0);
    const ColorField t = degrade(ColorField(w, h, 1.0), d, {{beta[0], beta[1], beta[2]}, 0.0, {0, 0, 0}});
    for (std::size_t i = 0; i < a.size(); ++i) worst_a = std::max(worst_a, std::abs(a[i] - t[i]));
  }
  return {worst_b <= 1e-12 && worst_a <= 1e-12,
          fmt("100 draws, max |B - simple_scatter| %.1e, max |A - oracle transmission| %.1e", worst_b, worst_a)};
}

Outcome parameter_recovery() {
  bool ok = true;
  std::string detail;
  for (WaterClass cls : {WaterClass::clear, WaterClass::medium, WaterClass::turbid}) {
    const auto t0 = Clock::now();
    SceneSpec spec = SceneSpec::for_class(cls, 3);
    spec.width = spec.height = 64;
    const SceneBundle b = generate_scene(spec);
    // observations as they come back from an 8-bit bundle; the last view is held out
    std::vector<ColorField> clean, observed;
    std::vector<ScalarField> depth;
    for (std::size_t v = 0; v + 1 < b.views(); ++v) {
      clean.push_back(b.clean[v]);
      depth.push_back(b.depth[v]);
      observed.push_back(quantize_srgb8(b.degraded[v]));
    }
    const PhysicsFit fit = fit_physics(clean, depth, observed);
    const MediumParams& tr = spec.medium;
    double e_binf = 0, e_beta = 0;
    for (int c = 0; c < 3; ++c) {
      e_binf = std::max(e_binf, std::abs(fit.medium.binf[c] - tr.binf[c]));
      e_beta = std::max(e_beta, std::abs(fit.medium.beta[c] - tr.beta[c]) / tr.beta[c]);
    }
    const double e_b = std::abs(fit.medium.b - tr.b) / tr.b;
    const RestoreResult r = restore(quantize_srgb8(b.degraded.back()), b.depth.back(), fit.atten, fit.scatter,
                                    neutral_profile(), neutral_scatter_options());
    const double p = masked_psnr(r.j_hat, b.clean.back(), r.valid);
    const double secs = seconds_since(t0);
    const bool pass = e_binf <= 0.05 && e_beta <= 0.10 && e_b <= 0.10 && p >= 35 && secs <= 300;
    ok = ok && pass;
    detail += fmt("%s%s: |dBinf| %.1e, beta rel %.1e, b rel %.1e, held-out PSNR %.1f dB, %.1fs",
                  detail.empty() ? "" : "; ", to_string(cls), e_binf, e_beta, e_b, p, secs);
  }
  return {ok, detail};
}

struct MiniRun {
  double psnr = 0;
  double seconds = 0;
  bool diverged = false;
  double early_median = 0, late_median = 0;
};

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

MiniRun mini_train(const SceneBundle& b, const LossWeights& lw) {
  TrainConfig cfg;
  cfg.iterations = 2000;
  cfg.n_points = 200;
  cfg.weights = lw;
  const auto t0 = Clock::now();
  const TrainResult r = train(b, cfg, default_classifier());
  MiniRun out;
  out.seconds = seconds_since(t0);
  out.diverged = r.diverged.has_value();
  if (out.diverged) return out;
  const ObjectiveSettings s = objective_settings(cfg, r.checkpoint.profile, true);
  out.psnr = mean_view_psnr(r.checkpoint.model, b.cameras, b.degraded, s);
  const auto start = static_cast<std::size_t>(enable_iteration(cfg.iterations, cfg.controller));
  const std::size_t tenth = r.totals.size() / 10;
  out.early_median = median({r.totals.begin() + start, r.totals.begin() + start + tenth});
  out.late_median = median({r.totals.end() - tenth, r.totals.end()});
  return out;
}

Outcome end_to_end(const MiniRun& full) {
  return {!full.diverged && full.psnr >= 25 && full.seconds <= 600,
          fmt("turbid seed 3, 96x96, 8 views, 200 points, 2000 iterations: train-view PSNR %.2f dB, %.0fs; "
              "median l_total first/last tenth after enable %.4f/%.4f",
              full.psnr, full.seconds, full.early_median, full.late_median)};
}

Outcome invariants() {
  std::vector<std::string> bad;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0, 1);

  const AttenuationParams ocean = AttenuationParams::ocean_default();
  ScatterParams sp = ScatterParams::zeros();
  sp.binf_raw = {logit(0.1), logit(0.4), logit(0.5)};
  sp.theta_b[0] = inverse_softplus(0.15);
  const auto binf = sp.binf();
  ScalarField ramp(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) ramp.at(x, y) = 0.05 * (y * 16 + x) + 0.01;
  const ColorField a = attenuation_map(ramp, ScalarField(16, 16), ocean, 1.0);
  const ScatterResult sr = scattering_map(ramp, sp, neutral_scatter_options());
  bool a_ok = true, b_ok = true, bs_ok = true, order_ok = true;
  for (std::size_t i = 0; i < ramp.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double ai = a[3 * i + c], bi = sr.b[3 * i + c];
      a_ok = a_ok && ai > 0 && ai <= 1 && (i == 0 || ai < a[3 * (i - 1) + c]);
      b_ok = b_ok && bi >= 0 && bi < binf[c] && (i == 0 || bi > sr.b[3 * (i - 1) + c]);
    }
    bs_ok = bs_ok && std::abs(sr.bs[i] + std::exp(-sr.tau[i]) - 1) <= 1e-15;
    order_ok = order_ok && a[3 * i] < a[3 * i + 1] && a[3 * i + 1] < a[3 * i + 2];
  }
  if (!a_ok) bad.push_back("A range/monotonicity");
  if (!b_ok) bad.push_back("B range/monotonicity");
  if (!bs_ok) bad.push_back("B_s + exp(-tau) = 1");
  if (!order_ok) bad.push_back("A_r < A_g < A_b");

  SceneSpec spec = SceneSpec::for_class(WaterClass::medium, 5);
  spec.n_gaussians = 80;
  spec.width = spec.height = 32;
  spec.n_views = 2;
  const SceneBundle sb = generate_scene(spec);
  GaussianCloud reversed;
  for (std::size_t i = sb.cloud.size(); i-- > 0;) reversed.push_back(sb.cloud.get(i));
  const RenderOutput r1 = rasterize(sb.cloud, sb.cameras[0]), r2 = rasterize(reversed, sb.cameras[0]);
  bool alpha_ok = true;
  double order_diff = 0;
  for (std::size_t i = 0; i < r1.alpha.size(); ++i) {
    alpha_ok = alpha_ok && r1.alpha[i] >= 0 && r1.alpha[i] <= 1;
    order_diff = std::max({order_diff, std::abs(r1.alpha[i] - r2.alpha[i]), std::abs(r1.depth[i] - r2.depth[i])});
  }
  for (std::size_t i = 0; i < r1.color.size(); ++i) order_diff = std::max(order_diff, std::abs(r1.color[i] - r2.color[i]));
  if (!alpha_ok) bad.push_back("alpha in [0,1]");
  if (order_diff > 1e-12) bad.push_back(fmt("input-order invariance (%.1e)", order_diff));

  bool simplex_ok = true;
  for (int n = 0; n < 50; ++n) {
    ColorField img(8, 8);
    for (double& v : img.data()) v = 0.02 + 0.9 * u(rng);
    const WaterProfile p = classify_water(img, ClassifierWeights::random(300 + n));
    double s = 0;
    for (double q : p.probs) {
      s += q;
      simplex_ok = simplex_ok && q > 0 && q < 1;
    }
    simplex_ok = simplex_ok && std::abs(s - 1) <= 1e-9;
  }
  if (!simplex_ok) bad.push_back("softmax simplex");

  const LossWeights lw;
  const auto c0 = wat_coefficients(0, lw), c1 = wat_coefficients(1, lw);
  bool wat_ok = c0.alpha == 1.2 && c0.beta == 0.8 && c1.alpha == 0.8 && c1.beta == 1.2;
  for (int i = 0; i <= 20; ++i) {
    const auto c = wat_coefficients(i / 20.0, lw);
    wat_ok = wat_ok && std::abs(c.alpha + c.beta - 2) <= 1e-15;
  }
  if (!wat_ok) bad.push_back("alpha(w) + beta(w) = 2 with (1.2, 0.8)/(0.8, 1.2) endpoints");

  std::string detail = "9 properties";
  for (const auto& s : bad) detail += "; violated: " + s;
  return {bad.empty(), detail};
}

Outcome controller_conformance() {
  const ControllerConfig cfg;
  const std::int64_t total = 2000;
  WaterProfile clear, turbid;
  clear.probs = {0.9, 0.05, 0.05};
  clear.w = 0.075;
  turbid.probs = {0.05, 0.05, 0.9};
  turbid.w = 0.925;
  const auto end = controller(clear, total - 1, total, cfg);
  bool turbid_ok = true, flag_ok = true;
  const std::int64_t start = enable_iteration(total, cfg);
  for (std::int64_t it = 0; it < total; ++it) {
    const auto s = controller(turbid, it, total, cfg);
    flag_ok = flag_ok && s.water_path_enabled == (it >= start) &&
              controller(clear, it, total, cfg).water_path_enabled == (it >= start);
    if (s.water_path_enabled) turbid_ok = turbid_ok && s.lr_attenuation == 1e-4 && s.lr_scattering == 1e-4;
  }
  const bool clear_ok = std::abs(end.lr_attenuation - 5e-5) <= 1e-18 && std::abs(end.lr_scattering - 5e-5) <= 1e-18;
  return {clear_ok && turbid_ok && flag_ok && start == 667,
          fmt("clear final lr %.3g/%.3g, turbid held at 1e-4: %s, water path from iteration %lld of %lld",
              end.lr_attenuation, end.lr_scattering, turbid_ok ? "yes" : "no", static_cast<long long>(start),
              static_cast<long long>(total))};
}

Outcome ablation(const MiniRun& full, const MiniRun& base) {
  std::printf("  Loss                         PSNR (dB)\n");
  std::printf("  L_basic only (w2..w5 = 0)    %6.2f\n", base.psnr);
  std::printf("  full (w2..w5 active)         %6.2f\n", full.psnr);
  return {!full.diverged && !base.diverged && full.psnr >= base.psnr,
          fmt("turbid: full %.2f dB vs baseline %.2f dB", full.psnr, base.psnr)};
}

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "dpgs_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cli = DPGS_CLI_PATH;
  const std::string bundle = (root / "bundle").string();
  write_text(root / "train.toml", "iterations = 90\neval_interval = 10\nseed = 4\nn_points = 60\n");
  if (run(cli + " synth --water turbid --seed 2 --gaussians 60 --width 32 --height 32 --views 3 --out " + bundle))
    return {false, "synth failed"};
  if (run(cli + " train --config " + (root / "train.toml").string() + " --bundle " + bundle + " --out " +
          (root / "a").string()))
    return {false, "first train failed"};
  // second run is driven by the first run's resolved.toml
  if (run(cli + " train --config " + (root / "a" / "resolved.toml").string() + " --out " + (root / "b").string()))
    return {false, "second train failed"};
  std::string diff;
  for (const char* f : {"checkpoint.dpgs", "train_log.csv"})
    if (read_text(root / "a" / f) != read_text(root / "b" / f)) diff += std::string(" ") + f;
  const auto size = fs::file_size(root / "a" / "checkpoint.dpgs");
  return {diff.empty(), diff.empty() ? fmt("checkpoint (%ju bytes) and train_log.csv byte-identical", static_cast<std::uintmax_t>(size))
                                     : "differs:" + diff};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("[%s] criterion %d: %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  report(1, "gradient gate", gradient_gate());
  report(2, "physics-oracle equivalence", oracle_equivalence());
  report(3, "parameter recovery", parameter_recovery());

  const SceneBundle turbid = generate_scene(SceneSpec::for_class(WaterClass::turbid, 3));
  const MiniRun full = mini_train(turbid, LossWeights{});
  report(4, "end-to-end mini-train", end_to_end(full));
  report(5, "invariant suite", invariants());
  report(6, "controller conformance", controller_conformance());
  LossWeights basic_only;
  basic_only.w2 = basic_only.w3 = basic_only.w4 = basic_only.w5 = 0;
  const MiniRun base = mini_train(turbid, basic_only);
  report(7, "ablation direction", ablation(full, base));
  report(8, "determinism", determinism());
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
