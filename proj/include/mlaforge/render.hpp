#pragma once

// Grayscale PNG rendering of a B-mode image with the adjacent-line
// correlation profile drawn in a panel underneath.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlaforge/imaging.hpp"
#include "mlaforge/metrics.hpp"

namespace mlaforge {

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}
  std::uint8_t& operator()(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  std::uint8_t operator()(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

namespace detail {

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

inline void png_chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_be32(out, static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

inline void draw_line(GrayImage& img, long x0, long y0, long x1, long y1, std::uint8_t v) {
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  for (;;) {
    if (x0 >= 0 && y0 >= 0 && x0 < static_cast<long>(img.width) && y0 < static_cast<long>(img.height)) img(y0, x0) = v;
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace detail

/// 8-bit grayscale PNG, no interlace, filter type 0 on every row.
inline std::string encode_png(const GrayImage& img) {
  if (img.width == 0 || img.height == 0) throw std::invalid_argument("encode_png: empty image");
  std::string raw;
  raw.reserve(img.height * (img.width + 1));
  for (std::size_t r = 0; r < img.height; ++r) {
    raw.push_back(0);
    raw.append(reinterpret_cast<const char*>(img.pixels.data() + r * img.width), img.width);
  }
  uLongf zsize = compressBound(static_cast<uLong>(raw.size()));
  std::string z(zsize, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zsize, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("encode_png: compression failed");
  }
  z.resize(zsize);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // depth 8, grayscale, deflate, filter 0, no interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", "");
  return out;
}

inline constexpr std::size_t kProfilePanelHeight = 64;

/// B-mode (depth rows x line columns) over `dynamic_range_db`, then a panel
/// of kProfilePanelHeight rows plotting rho in [0, 1] for each adjacent pair,
/// with MLA group boundaries ticked along the panel's bottom edge.
inline GrayImage render_bmode(const BeamformedImage& img, const MlaConfig& mla, double dynamic_range_db = 60.0) {
  const auto db = envelope_logcompress(img, dynamic_range_db);
  const std::size_t nd = db.rows(), nl = db.cols();
  GrayImage out(nl, nd + kProfilePanelHeight);
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t l = 0; l < nl; ++l) {
      const double v = (db(d, l) + dynamic_range_db) / dynamic_range_db;
      out(d, l) = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    }
  }
  if (nl < 2) return out;
  const auto profile = adjacent_correlation_profile(img);
  const auto labels = profile.labels(mla);
  const auto top = static_cast<long>(nd);
  const long span = static_cast<long>(kProfilePanelHeight) - 1;
  auto row_of = [&](double rho) { return top + std::lround((1.0 - std::clamp(rho, 0.0, 1.0)) * span); };
  for (std::size_t l = 0; l < profile.rho.size(); ++l) {
    if (mla.factor > 1 && labels[l] == PairKind::cross_group) {
      for (long r = top + span - 3; r <= top + span; ++r) out(static_cast<std::size_t>(r), l) = 96;
    }
  }
  for (std::size_t l = 0; l + 1 < profile.rho.size(); ++l) {
    detail::draw_line(out, static_cast<long>(l), row_of(profile.rho[l]), static_cast<long>(l + 1), row_of(profile.rho[l + 1]), 255);
  }
  if (profile.rho.size() == 1) out(static_cast<std::size_t>(row_of(profile.rho[0])), 0) = 255;
  return out;
}

}  // namespace mlaforge
