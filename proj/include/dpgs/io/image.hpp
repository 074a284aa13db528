#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpgs/core/error.hpp"
#include "dpgs/core/field.hpp"

namespace dpgs {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double srgb_encode(double linear) {
  const double v = std::clamp(linear, 0.0, 1.0);
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline double srgb_decode(double encoded) {
  const double v = std::clamp(encoded, 0.0, 1.0);
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline std::uint8_t to_srgb8(double linear) {
  return static_cast<std::uint8_t>(std::lround(srgb_encode(linear) * 255.0));
}

inline double from_srgb8(std::uint8_t v) { return srgb_decode(v / 255.0); }

/// Linear values that survive an 8-bit sRGB round trip unchanged.
inline ColorField quantize_srgb8(const ColorField& f) {
  ColorField out = f;
  for (double& v : out.data()) v = from_srgb8(to_srgb8(v));
  return out;
}

/// Writes a linear-RGB field as an 8-bit sRGB PNG.
inline void write_png(const std::filesystem::path& path, const ColorField& f) {
  if (f.empty()) throw InvalidArgument("write_png: empty image");
  std::vector<std::uint8_t> bytes(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) bytes[i] = to_srgb8(f[i]);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(f.width());
  img.height = static_cast<png_uint_32>(f.height());
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + img.message);
}

/// Reads a PNG (any libpng-supported layout) into linear RGB.
inline ColorField read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw IoError("cannot read " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  }
  ColorField f(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = from_srgb8(bytes[i]);
  return f;
}

/// Little-endian PFM ("Pf" grayscale or "PF" color), rows stored bottom-up.
template <int C>
void write_pfm(const std::filesystem::path& path, const Field<C>& f) {
  static_assert(C == 1 || C == 3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (C == 3 ? "PF" : "Pf") << '\n' << f.width() << ' ' << f.height() << '\n' << "-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(f.width()) * C);
  for (int y = f.height() - 1; y >= 0; --y) {
    for (int x = 0; x < f.width(); ++x)
      for (int c = 0; c < C; ++c) row[x * C + c] = static_cast<float>(f.at(x, y, c));
    for (float v : row) {
      std::uint32_t u = std::bit_cast<std::uint32_t>(v);
      if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
      out.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

template <int C>
Field<C> read_pfm(const std::filesystem::path& path) {
  static_assert(C == 1 || C == 3);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  in.get();
  const int channels = magic == "PF" ? 3 : magic == "Pf" ? 1 : 0;
  if (channels != C) throw IoError(path.string() + ": expected " + (C == 3 ? "PF" : "Pf") + " header");
  if (!in || w <= 0 || h <= 0 || scale == 0) throw IoError(path.string() + ": malformed PFM header");
  const bool little = scale < 0;
  Field<C> f(w, h);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < C; ++c) {
        std::uint32_t u = 0;
        if (!in.read(reinterpret_cast<char*>(&u), 4)) throw IoError(path.string() + ": truncated PFM");
        if (little != (std::endian::native == std::endian::little)) u = __builtin_bswap32(u);
        f.at(x, y, c) = static_cast<double>(std::bit_cast<float>(u));
      }
  return f;
}

}  // namespace dpgs
