#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dpgs/io/serialize.hpp"

using namespace dpgs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dpgs_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ColorField random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  ColorField f(w, h);
  for (double& v : f.data()) v = u(rng);
  return f;
}

}  // namespace

TEST(Srgb, EncodeDecodeRoundTrip) {
  for (int k = 0; k < 256; ++k) EXPECT_EQ(to_srgb8(from_srgb8(static_cast<std::uint8_t>(k))), k);
  EXPECT_EQ(srgb_encode(0.0), 0.0);
  EXPECT_NEAR(srgb_encode(1.0), 1.0, 1e-15);
  EXPECT_NEAR(srgb_decode(srgb_encode(0.3)), 0.3, 1e-14);
}

TEST(Png, RoundTripOfQuantizedImage) {
  const fs::path dir = scratch("png");
  const ColorField img = quantize_srgb8(random_image(7, 5, 1));
  write_png(dir / "a.png", img);
  const ColorField back = read_png(dir / "a.png");
  EXPECT_EQ(back, img);
  EXPECT_THROW(read_png(dir / "missing.png"), IoError);
}

TEST(Pfm, RoundTripAndOrientation) {
  const fs::path dir = scratch("pfm");
  ScalarField d(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6.5});
  write_pfm(dir / "d.pfm", d);
  EXPECT_EQ(read_pfm<1>(dir / "d.pfm"), d);
  // bottom-up rows: the first stored value is the bottom-left pixel
  const std::string bytes = read_text(dir / "d.pfm");
  const std::string header = "Pf\n3 2\n-1.0\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  float first = 0;
  std::memcpy(&first, bytes.data() + header.size(), 4);
  EXPECT_EQ(first, 4.0f);

  const ColorField c = random_image(4, 3, 2);
  write_pfm(dir / "c.pfm", c);
  const ColorField cb = read_pfm<3>(dir / "c.pfm");
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(cb[i], static_cast<double>(static_cast<float>(c[i])));
  EXPECT_THROW(read_pfm<1>(dir / "c.pfm"), IoError);
}

TEST(Bundle, RoundTrip) {
  SceneSpec s = SceneSpec::for_class(WaterClass::clear, 4);
  s.n_gaussians = 40;
  s.width = s.height = 24;
  s.n_views = 2;
  const SceneBundle b = generate_scene(s);
  const fs::path dir = scratch("bundle");
  write_bundle(dir, b);
  for (const char* f : {"clean/0000.png", "degraded/0001.png", "depth/0000.pfm", "cameras.json", "truth.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const SceneBundle r = read_bundle(dir);
  EXPECT_EQ(r.truth, b.truth);
  ASSERT_EQ(r.views(), 2u);
  for (std::size_t v = 0; v < 2; ++v) {
    EXPECT_EQ(r.cameras[v].rotation, b.cameras[v].rotation);
    EXPECT_EQ(r.cameras[v].translation, b.cameras[v].translation);
    EXPECT_EQ(r.cameras[v].fx, b.cameras[v].fx);
    EXPECT_EQ(r.degraded[v], quantize_srgb8(b.degraded[v]));
    for (std::size_t i = 0; i < b.depth[v].size(); ++i) EXPECT_NEAR(r.depth[v][i], b.depth[v][i], 1e-5);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  Checkpoint ck;
  GaussianCloud pts;
  GaussianPrimitive g;
  g.mean = {0.1, -0.2, 4.0};
  pts.push_back(g);
  g.mean = {0.3, 0.2, 5.0};
  pts.push_back(g);
  TrainConfig cfg;
  ck.model = initial_model(pts, cfg);
  ck.model.atten.w = {0.9, 1.0 / 3, 1.1};
  ck.classifier = ClassifierWeights::random(3);
  ck.profile.probs = {0.2, 0.3, 0.5};
  ck.profile.w = 0.65;
  ck.profile.bg_ratio = 0.97;
  ck.iteration = 1234;
  const std::string bytes = encode_checkpoint(ck, "iterations = 1234\n");
  EXPECT_EQ(bytes.substr(0, 5), "DPGS1");
  const LoadedCheckpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.checkpoint, ck);
  EXPECT_EQ(back.config_toml, "iterations = 1234\n");
  EXPECT_EQ(encode_checkpoint(back.checkpoint, back.config_toml), bytes);
}

TEST(Checkpoint, RejectsCorruptInput) {
  Checkpoint ck;
  const std::string bytes = encode_checkpoint(ck, "");
  EXPECT_THROW(decode_checkpoint("DPGS0" + bytes.substr(5)), IoError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), IoError);
}

TEST(Csv, TrainLogColumns) {
  TrainLogRow row;
  row.iter = 7;
  row.parts.basic = 0.25;
  row.parts.total = 0.5;
  row.psnr = 30.0;
  const std::string csv = train_log_csv({row});
  EXPECT_EQ(csv, "iter,basic,ab,wat,edge,ms,total,psnr\n7,0.25,0,0,0,0,0.5,30\n");
}
