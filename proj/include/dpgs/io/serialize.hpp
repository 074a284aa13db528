#pragma once

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <type_traits>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpgs/diff/gradcheck.hpp"
#include "dpgs/io/image.hpp"
#include "dpgs/synth/scene.hpp"
#include "dpgs/train/trainer.hpp"

namespace dpgs {

using json = nlohmann::json;

inline json to_json(const Camera& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
          {"rotation", c.rotation}, {"translation", c.translation}};
}

inline Camera camera_from_json(const json& j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.rotation = j.at("rotation").get<Mat3>();
  c.translation = j.at("translation").get<Vec3>();
  c.validate();
  return c;
}

inline json to_json(const MediumParams& m) { return {{"beta", m.beta}, {"b", m.b}, {"binf", m.binf}}; }

inline MediumParams medium_from_json(const json& j) {
  MediumParams m;
  m.beta = j.at("beta").get<Vec3>();
  m.b = j.at("b").get<double>();
  m.binf = j.at("binf").get<Vec3>();
  m.validate();
  return m;
}

inline json to_json(const SceneSpec& s) {
  return {{"seed", s.seed},   {"gaussians", s.n_gaussians}, {"width", s.width},
          {"height", s.height}, {"views", s.n_views},         {"water", to_string(s.water)},
          {"medium", to_json(s.medium)}, {"d_min", s.d_min},  {"d_max", s.d_max},
          {"arc_degrees", s.arc_degrees}};
}

inline SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_gaussians = j.at("gaussians").get<int>();
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.n_views = j.at("views").get<int>();
  s.water = parse_water_class(j.at("water").get<std::string>());
  s.medium = medium_from_json(j.at("medium"));
  s.d_min = j.at("d_min").get<double>();
  s.d_max = j.at("d_max").get<double>();
  s.arc_degrees = j.at("arc_degrees").get<double>();
  s.validate();
  return s;
}

inline json to_json(const WaterProfile& p) {
  return {{"probs", p.probs}, {"w", p.w}, {"bg_ratio", p.bg_ratio}, {"class", to_string(p.argmax())}};
}

inline WaterProfile profile_from_json(const json& j) {
  WaterProfile p;
  p.probs = j.at("probs").get<std::array<double, 3>>();
  p.w = j.at("w").get<double>();
  p.bg_ratio = j.at("bg_ratio").get<double>();
  return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// ---- bundle directory ----

inline std::string frame_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.%s", i, ext);
  return buf;
}

inline void write_bundle(const std::filesystem::path& dir, const SceneBundle& b) {
  namespace fs = std::filesystem;
  for (const char* sub : {"clean", "degraded", "depth"}) fs::create_directories(dir / sub);
  json cams = json::array();
  for (std::size_t v = 0; v < b.views(); ++v) {
    write_png(dir / "clean" / frame_name(v, "png"), b.clean[v]);
    write_png(dir / "degraded" / frame_name(v, "png"), b.degraded[v]);
    write_pfm(dir / "depth" / frame_name(v, "pfm"), b.depth[v]);
    cams.push_back(to_json(b.cameras[v]));
  }
  write_text(dir / "cameras.json", cams.dump(2) + "\n");
  write_text(dir / "truth.json", to_json(b.truth).dump(2) + "\n");
}

/// Loads a bundle directory. The Gaussian cloud is not persisted.
inline SceneBundle read_bundle(const std::filesystem::path& dir) {
  SceneBundle b;
  const json cams = read_json(dir / "cameras.json");
  if (!cams.is_array() || cams.empty()) throw IoError((dir / "cameras.json").string() + ": expected a camera array");
  b.truth = scene_spec_from_json(read_json(dir / "truth.json"));
  for (std::size_t v = 0; v < cams.size(); ++v) {
    b.cameras.push_back(camera_from_json(cams[v]));
    b.clean.push_back(read_png(dir / "clean" / frame_name(v, "png")));
    b.degraded.push_back(read_png(dir / "degraded" / frame_name(v, "png")));
    b.depth.push_back(read_pfm<1>(dir / "depth" / frame_name(v, "pfm")));
    const Camera& c = b.cameras.back();
    const ScalarField probe(c.width, c.height);
    require_same_dims(b.clean.back(), probe, "bundle clean image vs camera");
    require_same_dims(b.degraded.back(), probe, "bundle degraded image vs camera");
    require_same_dims(b.depth.back(), probe, "bundle depth vs camera");
  }
  return b;
}

// ---- checkpoint ----

inline constexpr char kCheckpointMagic[5] = {'D', 'P', 'G', 'S', '1'};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (pos + sizeof(T) > in.size()) throw IoError("checkpoint truncated");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return std::bit_cast<T>(u);
}

}  // namespace detail

/// All learnable and classifier slots of a checkpoint in one vector.
inline ParamVector checkpoint_params(const Checkpoint& ck) {
  ParamVector pv = pack(ck.model);
  pack_into(pv, ck.classifier);
  return pv;
}

/// Layout: magic, u32 header length, JSON header, u32 slot count, per slot
/// (u32 name length, name, u64 value count), then every value as f64.
inline std::string encode_checkpoint(const Checkpoint& ck, const std::string& config_toml) {
  const ParamVector pv = checkpoint_params(ck);
  const json header = {{"format", 1},
                       {"iteration", ck.iteration},
                       {"profile", to_json(ck.profile)},
                       {"gaussians", ck.model.gaussians.size()},
                       {"config", config_toml}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(pv.layout().size()));
  for (const auto& s : pv.layout()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    detail::put_le<std::uint64_t>(out, s.length);
  }
  for (double v : pv.data()) detail::put_le<double>(out, v);
  return out;
}

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::string config_toml;
};

inline LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || bytes.compare(0, 5, kCheckpointMagic, 5) != 0)
    throw IoError("not a DPGS1 checkpoint");
  std::size_t pos = sizeof kCheckpointMagic;
  const auto hlen = detail::get_le<std::uint32_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw IoError("checkpoint header truncated");
  json header;
  try {
    header = json::parse(bytes.substr(pos, hlen));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  pos += hlen;
  ParamVector pv;
  std::vector<std::pair<std::string, std::uint64_t>> table;
  const auto nslots = detail::get_le<std::uint32_t>(bytes, pos);
  for (std::uint32_t i = 0; i < nslots; ++i) {
    const auto nlen = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + nlen > bytes.size()) throw IoError("checkpoint slot table truncated");
    std::string name = bytes.substr(pos, nlen);
    pos += nlen;
    table.emplace_back(std::move(name), detail::get_le<std::uint64_t>(bytes, pos));
  }
  for (const auto& [name, len] : table) {
    std::vector<double> v(len);
    for (double& x : v) x = detail::get_le<double>(bytes, pos);
    pv.add(name, v);
  }
  if (pos != bytes.size()) throw IoError("checkpoint has trailing bytes");

  LoadedCheckpoint out;
  Checkpoint& ck = out.checkpoint;
  ck.model.gaussians = GaussianCloud(header.at("gaussians").get<std::size_t>());
  unpack(pv, ck.model);
  unpack(pv, ck.classifier);
  ck.profile = profile_from_json(header.at("profile"));
  ck.iteration = header.at("iteration").get<std::int64_t>();
  out.config_toml = header.at("config").get<std::string>();
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck, const std::string& config_toml) {
  write_text(path, encode_checkpoint(ck, config_toml));
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_text(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// ---- CSV logs ----

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "iter,basic,ab,wat,edge,ms,total,psnr\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iter);
    for (double v : {r.parts.basic, r.parts.ab, r.parts.wat, r.parts.edge, r.parts.ms, r.parts.total, r.psnr})
      out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

inline std::string gradcheck_csv(const std::vector<GradReport>& reports) {
  std::ostringstream out;
  out << "op,slot,err,step\n";
  for (const auto& r : reports) write_gradcheck_rows(out, r);
  return out.str();
}

}  // namespace dpgs
