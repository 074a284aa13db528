#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dpgs/io/image.hpp"
#include "dpgs/io/serialize.hpp"
#include "dpgs/train/gradcheck_suite.hpp"
#include "dpgs/train/restore.hpp"
#include "dpgs/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace dpgs;

namespace {

constexpr int kExitOk = 0, kExitUsage = 2, kExitDiverged = 3, kExitGradcheck = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string toml_value(double v) {
  std::string s = format_double(v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}
std::string toml_value(bool v) { return v ? "true" : "false"; }
std::string toml_value(const std::string& v) {
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}
template <class T>
  requires std::is_integral_v<T>
std::string toml_value(T v) {
  return std::to_string(v);
}

/// Options of one subcommand, each known by its bare key name.
struct Registry {
  explicit Registry(CLI::App* a) : app(a) {}

  CLI::App* app;
  struct Entry {
    std::string key;
    std::function<std::string()> value;
    std::function<std::string()> check;  // empty string when valid
  };
  std::vector<Entry> entries;
  std::string config_path;

  template <class T>
  Entry& bind(const std::string& key, T& var, const std::string& help) {
    app->add_option("--" + key, var, help)->capture_default_str();
    entries.push_back({key, [&var] { return toml_value(var); }, {}});
    return entries.back();
  }

  template <class T>
  void range(const std::string& key, T& var, double lo, double hi, bool open_lo = false, bool open_hi = false,
             const std::string& help = "") {
    Entry& e = bind(key, var, help);
    e.check = [&var, key, lo, hi, open_lo, open_hi] {
      const double v = static_cast<double>(var);
      const bool ok = !std::isnan(v) && (std::isfinite(v) || std::isinf(hi)) && (open_lo ? v > lo : v >= lo) && (open_hi ? v < hi : v <= hi);
      if (ok) return std::string();
      std::ostringstream m;
      m << key << " = " << format_double(v) << " is out of range: must be in " << (open_lo ? "(" : "[") << lo << ", "
        << (std::isinf(hi) ? "inf" : format_double(hi)) << (open_hi || std::isinf(hi) ? ")" : "]");
      return m.str();
    };
  }

  void enable_config() {
    app->add_option("--config", config_path, "TOML file of key = value pairs; flags take precedence");
  }

  /// Applies `key = value` items to options not given on the command line.
  void apply(const std::vector<CLI::ConfigItem>& items, const std::string& origin) {
    for (const auto& item : items) {
      std::string key = item.name;
      for (auto it = item.parents.rbegin(); it != item.parents.rend(); ++it) key = *it + "." + key;
      const bool known = std::any_of(entries.begin(), entries.end(), [&](const Entry& e) { return e.key == key; });
      if (!known) throw UsageError(origin + ": unknown config key '" + key + "'");
      CLI::Option* opt = app->get_option("--" + key);
      if (opt->count() > 0) continue;
      try {
        opt->add_result(item.inputs);
        opt->run_callback();
      } catch (const CLI::Error& e) {
        throw UsageError(origin + ": bad value for '" + key + "': " + e.what());
      }
    }
  }

  void load_config_file() {
    if (config_path.empty()) return;
    if (!fs::exists(config_path)) throw UsageError("config file not found: " + config_path);
    try {
      apply(CLI::ConfigTOML().from_file(config_path), config_path);
    } catch (const CLI::ParseError& e) {
      throw UsageError(config_path + ": " + e.what());
    }
  }

  void check() const {
    for (const auto& e : entries)
      if (e.check)
        if (std::string msg = e.check(); !msg.empty()) throw UsageError(msg);
  }

  std::string resolved_toml(const std::string& skip = "") const {
    std::string out = "# " + app->get_name() + "\n";
    for (const auto& e : entries)
      if (e.key != skip) out += e.key + " = " + e.value() + "\n";
    return out;
  }
};

void add_train_keys(Registry& r, TrainConfig& c) {
  auto& cc = c.controller;
  auto& lw = c.weights;
  const double inf = std::numeric_limits<double>::infinity();
  r.range("iterations", c.iterations, 0, inf, false, false, "total training iterations");
  r.bind("seed", c.seed, "seed for initialization");
  r.range("eval_interval", c.eval_interval, 1, inf, false, false, "log every N iterations");
  r.range("enable_fraction", cc.enable_fraction, 0, 1, true, true, "fraction of iterations before the water path is enabled");
  r.range("lr_physics_start", cc.lr_physics_start, 0, inf, true, false, "physics learning rate at enable");
  r.range("lr_physics_end", cc.lr_physics_end, 0, inf, true, false, "clear-water physics learning rate at the end");
  r.range("lr_attenuation_cap", cc.lr_attenuation_cap, 0, inf, true, false, "attenuation learning-rate cap");
  r.range("lr_scattering_cap", cc.lr_scattering_cap, 0, inf, true, false, "scattering learning-rate cap");
  r.range("lr_position", cc.lr_position, 0, inf, true, false, "Gaussian mean learning rate");
  r.range("lr_color", cc.lr_color, 0, inf, true, false, "Gaussian color learning rate");
  r.range("lr_opacity", cc.lr_opacity, 0, inf, true, false, "Gaussian opacity learning rate");
  r.range("lr_scale", cc.lr_scale, 0, inf, true, false, "Gaussian log-scale learning rate");
  r.range("lr_rotation", cc.lr_rotation, 0, inf, true, false, "Gaussian rotation learning rate");
  r.range("w1", lw.w1, 0, inf, false, false, "weight of the reconstruction term");
  r.range("w2", lw.w2, 0, inf, false, false, "weight of the backscatter/attenuation consistency term");
  r.range("w3", lw.w3, 0, inf, false, false, "weight of the water-adaptive term");
  r.range("w4", lw.w4, 0, inf, false, false, "weight of the edge-aware smoothness term");
  r.range("w5", lw.w5, 0, inf, false, false, "weight of the multi-scale term");
  r.range("mu", lw.mu, 0, inf, false, false, "transmittance scale in the consistency term");
  r.range("lambda_edge", lw.lambda_edge, 0, inf, false, false, "smoothness share of the edge term");
  r.range("alpha_s", lw.alpha_s, 0, inf, false, false, "smoothness falloff with depth gradient");
  r.range("lambda_ms", lw.lambda_ms, 0, inf, false, false, "multi-scale term scale");
  r.range("gamma_wat", lw.gamma_wat, 0, inf, false, false, "consistency share of the water-adaptive term");
  r.range("lambda_d", lw.lambda_d, 0, 1, false, false, "SSIM share of the reconstruction term");
  r.range("alpha_clear", lw.alpha_clear, 0, inf, false, false, "attenuation-path weight for clear water");
  r.range("alpha_turbid", lw.alpha_turbid, 0, inf, false, false, "attenuation-path weight for turbid water");
  r.range("beta_clear", lw.beta_clear, 0, inf, false, false, "scattering-path weight for clear water");
  r.range("beta_turbid", lw.beta_turbid, 0, inf, false, false, "scattering-path weight for turbid water");
  r.bind("detach_depth", c.detach_depth, "stop physics gradients from reaching depth");
  r.range("n_points", c.n_points, 1, inf, false, false, "seed points drawn from the bundle depth");
  r.range("init_jitter", c.init_jitter, 0, inf, false, false, "seed point jitter relative to depth");
  r.range("init_gray", c.init_gray, 0, 1, false, false, "initial Gaussian color");
  r.range("sigma_c", c.scatter.sigma_c, 0, inf, true, false, "depth-confidence bandwidth (inf disables)");
  r.bind("multiscale", c.scatter.multiscale, "use the multi-scale depth network");
  r.range("w_cut", c.raster.w_cut, 0, 1, true, true, "per-pixel splat weight cutoff");
  r.range("alpha_min", c.raster.alpha_min, 0, 1, true, true, "accumulated alpha below which depth is d_far");
  r.range("d_far", c.raster.d_far, 0, inf, true, false, "background depth");
}

void add_scene_keys(Registry& r, SceneSpec& s, std::string& water) {
  const double inf = std::numeric_limits<double>::infinity();
  r.bind("seed", s.seed, "scene seed");
  r.range("gaussians", s.n_gaussians, 1, inf, false, false, "number of Gaussians");
  r.range("width", s.width, 8, inf, false, false, "image width");
  r.range("height", s.height, 8, inf, false, false, "image height");
  r.range("views", s.n_views, 1, inf, false, false, "number of views");
  r.bind("water", water, "water class: clear, medium or turbid")
      .check = [&water] {
        try {
          parse_water_class(water);
          return std::string();
        } catch (const InvalidArgument& e) {
          return std::string("water: ") + e.what();
        }
      };
  r.range("d_min", s.d_min, 0, inf, true, false, "nearest relief depth");
  r.range("d_max", s.d_max, 0, inf, true, false, "farthest relief depth");
  r.range("arc_degrees", s.arc_degrees, 0, 180, false, true, "camera arc");
}

/// Train config stored in a checkpoint.
TrainConfig train_config_from_text(const std::string& text) {
  CLI::App tmp;
  Registry r(&tmp);
  TrainConfig cfg;
  std::string bundle, out;
  add_train_keys(r, cfg);
  r.bind("bundle", bundle, "");
  r.bind("out", out, "");
  std::vector<std::string> no_args;
  tmp.parse(no_args);
  std::istringstream in(text);
  r.apply(CLI::ConfigTOML().from_config(in), "checkpoint config");
  return cfg;
}

void write_resolved(const fs::path& dir, const Registry& r) {
  fs::create_directories(dir);
  write_text(dir / "resolved.toml", r.resolved_toml());
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---- commands ----

int cmd_synth(const Registry& r, SceneSpec spec, const std::string& water, const std::string& out) {
  spec = [&] {
    SceneSpec s = SceneSpec::for_class(parse_water_class(water), spec.seed);
    s.n_gaussians = spec.n_gaussians;
    s.width = spec.width;
    s.height = spec.height;
    s.n_views = spec.n_views;
    s.d_min = spec.d_min;
    s.d_max = spec.d_max;
    s.arc_degrees = spec.arc_degrees;
    return s;
  }();
  const SceneBundle b = generate_scene(spec);
  write_bundle(out, b);
  write_resolved(out, r);
  std::printf("wrote %zu views (%s water) to %s\n", b.views(), water.c_str(), out.c_str());
  return kExitOk;
}

int cmd_train(const Registry& r, const TrainConfig& cfg, const std::string& bundle_dir, const std::string& out) {
  const SceneBundle b = read_bundle(bundle_dir);
  const TrainResult res = train(b, cfg, default_classifier());
  fs::create_directories(out);
  // The output directory is not part of the run's identity.
  save_checkpoint(fs::path(out) / "checkpoint.dpgs", res.checkpoint, r.resolved_toml("out"));
  write_text(fs::path(out) / "train_log.csv", train_log_csv(res.log));
  write_resolved(out, r);
  if (res.diverged) {
    std::fprintf(stderr, "diverged: %s (last good checkpoint at iteration %lld written)\n", res.diverged->c_str(),
                 static_cast<long long>(res.checkpoint.iteration));
    return kExitDiverged;
  }
  const WaterProfile& p = res.checkpoint.profile;
  std::printf("trained %lld iterations; water %s (w = %.3f); final log psnr %.2f dB\n",
              static_cast<long long>(res.checkpoint.iteration), to_string(p.argmax()), p.w,
              res.log.empty() ? 0.0 : res.log.back().psnr);
  return kExitOk;
}

int cmd_render(const Registry& r, const std::string& ckpt, const std::string& bundle_dir, int view,
               const std::string& out) {
  const LoadedCheckpoint lc = load_checkpoint(ckpt);
  const TrainConfig cfg = train_config_from_text(lc.config_toml);
  const json cams = read_json(fs::path(bundle_dir) / "cameras.json");
  if (view < 0 || static_cast<std::size_t>(view) >= cams.size())
    throw UsageError("view " + std::to_string(view) + " outside [0, " + std::to_string(cams.size()) + ")");
  const Camera cam = camera_from_json(cams[view]);
  const Model& m = lc.checkpoint.model;
  const ObjectiveSettings s = objective_settings(cfg, lc.checkpoint.profile, true);
  const RenderOutput ro = rasterize(m.gaussians, cam, s.raster);
  const ScalarField e = edge_factor(ro.color, ro.depth);
  const ColorField a = attenuation_map(ro.depth, e, m.atten, s.t_mod);
  const ScatterResult sc = scattering_map(ro.depth, m.scatter, s.scatter);
  ColorField composite = ro.color;
  for (std::size_t i = 0; i < composite.size(); ++i) composite[i] = ro.color[i] * a[i] + sc.b[i];
  const fs::path dir(out);
  fs::create_directories(dir);
  write_png(dir / "I_hat.png", composite);
  write_png(dir / "J.png", ro.color);
  write_png(dir / "A.png", a);
  write_png(dir / "B.png", sc.b);
  write_pfm(dir / "A.pfm", a);
  write_pfm(dir / "B.pfm", sc.b);
  write_pfm(dir / "Bs.pfm", sc.bs);
  write_pfm(dir / "E.pfm", e);
  write_pfm(dir / "C.pfm", sc.confidence);
  write_pfm(dir / "M.pfm", sc.m);
  write_pfm(dir / "D.pfm", ro.depth);
  write_resolved(dir, r);
  std::printf("rendered view %d to %s\n", view, out.c_str());
  return kExitOk;
}

int cmd_restore(const Registry& r, const std::string& ckpt, const std::string& degraded, const std::string& depth,
                double a_min, const std::string& out) {
  const LoadedCheckpoint lc = load_checkpoint(ckpt);
  const TrainConfig cfg = train_config_from_text(lc.config_toml);
  const Model& m = lc.checkpoint.model;
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(degraded)) {
    for (const auto& png : sorted_files(degraded, ".png"))
      jobs.emplace_back(png, fs::path(depth) / (png.stem().string() + ".pfm"));
  } else {
    jobs.emplace_back(degraded, depth);
  }
  const fs::path dir(out);
  fs::create_directories(dir / "restored");
  fs::create_directories(dir / "valid");
  std::size_t masked = 0;
  for (const auto& [img, dep] : jobs) {
    const RestoreResult res =
        restore(read_png(img), read_pfm<1>(dep), m.atten, m.scatter, lc.checkpoint.profile, cfg.scatter, a_min);
    write_png(dir / "restored" / img.filename(), res.j_hat);
    ScalarField valid(res.j_hat.width(), res.j_hat.height());
    for (std::size_t i = 0; i < valid.size(); ++i) {
      valid[i] = res.valid[i];
      masked += res.valid[i] == 0;
    }
    write_pfm(dir / "valid" / (img.stem().string() + ".pfm"), valid);
  }
  write_resolved(dir, r);
  std::printf("restored %zu images to %s (%zu pixels masked)\n", jobs.size(), out.c_str(), masked);
  return kExitOk;
}

int cmd_eval(const Registry& r, const std::string& pred, const std::string& ref, const std::string& out) {
  const auto refs = sorted_files(ref, ".png");
  if (refs.empty()) throw UsageError("no .png files in " + ref);
  std::string csv = "image,psnr,ssim\n";
  double sp = 0, ss = 0;
  for (const auto& rp : refs) {
    const fs::path pp = fs::path(pred) / rp.filename();
    if (!fs::exists(pp)) throw UsageError("missing prediction " + pp.string());
    const ColorField a = read_png(pp), b = read_png(rp);
    if (!a.same_dims(b)) throw UsageError("size mismatch for " + rp.filename().string());
    const double p = psnr(a, b), s = ssim(a, b);
    sp += p;
    ss += s;
    csv += rp.filename().string() + "," + format_double(p) + "," + format_double(s) + "\n";
  }
  const double n = static_cast<double>(refs.size());
  csv += "mean," + format_double(sp / n) + "," + format_double(ss / n) + "\n";
  fs::create_directories(out);
  write_text(fs::path(out) / "eval.csv", csv);
  write_resolved(out, r);
  std::printf("%zu images: mean psnr %.3f dB, mean ssim %.4f\n", refs.size(), sp / n, ss / n);
  return kExitOk;
}

int cmd_gradcheck(const Registry& r, const GradcheckSettings& gs, const std::string& out) {
  const GradcheckSuiteResult res = run_gradcheck_suite(gs);
  fs::create_directories(out);
  write_text(fs::path(out) / "gradcheck.csv", gradcheck_csv(res.reports));
  write_resolved(out, r);
  for (const auto& rep : res.reports)
    std::printf("%-20s max rel err %.3e (%s)\n", rep.op.c_str(), rep.max_rel_error, rep.argmax_slot.c_str());
  for (const auto& f : res.failures) std::fprintf(stderr, "FAIL %s\n", f.c_str());
  std::printf("%s: %zu checks, %zu failures\n", res.passed() ? "PASS" : "FAIL", res.reports.size(),
              res.failures.size());
  return res.passed() ? kExitOk : kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Underwater Gaussian splatting with learned attenuation and backscatter"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dpgs 0.1");

  SceneSpec spec;
  std::string water = "medium", out;
  Registry synth(app.add_subcommand("synth", "write a synthetic scene bundle"));
  synth.enable_config();
  add_scene_keys(synth, spec, water);
  synth.bind("out", out, "output bundle directory");

  TrainConfig tcfg;
  std::string bundle, tout;
  Registry tr(app.add_subcommand("train", "train on a bundle; writes checkpoint.dpgs and train_log.csv"));
  tr.enable_config();
  add_train_keys(tr, tcfg);
  tr.bind("bundle", bundle, "input bundle directory");
  tr.bind("out", tout, "output directory");

  std::string rckpt, rbundle, rout;
  int view = 0;
  Registry rd(app.add_subcommand("render", "render a view: I_hat, J, A, B and PFM dumps of A, B, Bs, E, C, M, D"));
  rd.enable_config();
  rd.bind("checkpoint", rckpt, "checkpoint file");
  rd.bind("bundle", rbundle, "bundle directory whose cameras.json supplies the view");
  rd.range("view", view, 0, std::numeric_limits<double>::infinity(), false, false, "camera index");
  rd.bind("out", rout, "output directory");

  std::string sckpt, sdeg, sdep, sout;
  double a_min = 1e-3;
  Registry rs(app.add_subcommand("restore", "invert the learned medium: degraded + depth -> restored colors"));
  rs.enable_config();
  rs.bind("checkpoint", sckpt, "checkpoint file");
  rs.bind("degraded", sdeg, "degraded PNG, or a directory of them");
  rs.bind("depth", sdep, "depth PFM, or a directory with matching names");
  rs.range("a_min", a_min, 0, 1, true, true, "attenuation floor; lower values are masked");
  rs.bind("out", sout, "output directory");

  std::string epred, eref, eout;
  Registry ev(app.add_subcommand("eval", "PSNR/SSIM of matching PNGs in two directories"));
  ev.enable_config();
  ev.bind("pred", epred, "directory of predictions");
  ev.bind("ref", eref, "directory of references");
  ev.bind("out", eout, "output directory for eval.csv");

  GradcheckSettings gs;
  std::string gout;
  Registry gc(app.add_subcommand("gradcheck", "finite-difference check of every gradient; exit 4 on failure"));
  gc.enable_config();
  gc.range("step", gs.step, 0, 1, true, false, "central-difference step");
  gc.range("tolerance", gs.tolerance, 0, 1, true, false, "maximum relative error");
  gc.range("fixtures", gs.fixtures_per_op, 1, 100, false, false, "fixtures per operator");
  gc.bind("out", gout, "output directory for gradcheck.csv");

  try {
    app.parse(argc, argv);
    for (Registry* r : {&synth, &tr, &rd, &rs, &ev, &gc}) {
      if (!r->app->parsed()) continue;
      r->load_config_file();
      r->check();
      for (const auto& e : r->entries)
        if ((e.key == "out" || e.key == "bundle" || e.key == "checkpoint" || e.key == "degraded" ||
             e.key == "depth" || e.key == "pred" || e.key == "ref") &&
            e.value() == "\"\"")
          throw UsageError("missing required key '" + e.key + "'");
    }
    if (synth.app->parsed()) {
      spec.validate();
      return cmd_synth(synth, spec, water, out);
    }
    if (tr.app->parsed()) {
      tcfg.validate();
      return cmd_train(tr, tcfg, bundle, tout);
    }
    if (rd.app->parsed()) return cmd_render(rd, rckpt, rbundle, view, rout);
    if (rs.app->parsed()) return cmd_restore(rs, sckpt, sdeg, sdep, a_min, sout);
    if (ev.app->parsed()) return cmd_eval(ev, epred, eref, eout);
    if (gc.app->parsed()) return cmd_gradcheck(gc, gs, gout);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const DivergedError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitUsage;
}
