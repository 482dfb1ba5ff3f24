#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "t4t/array.hpp"
#include "t4t/error.hpp"
#include "t4t/labels.hpp"

namespace t4t {

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major
};

// Single-channel image; maxval 255 or 65535.
struct GrayImage {
  std::size_t height = 0, width = 0;
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> values;
};

namespace detail {

struct PnmHeader {
  std::string magic;
  std::size_t width = 0, height = 0;
  std::uint32_t maxval = 0;
  std::size_t data_offset = 0;
};

inline PnmHeader parse_pnm_header(const std::string& bytes, const std::string& what) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw ParseError(what + ": " + msg + " at byte " + std::to_string(pos));
  };
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* field) -> std::uint64_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      fail(std::string("expected ") + field);
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::uint64_t>(bytes[pos] - '0');
      if (v > (1ULL << 32)) fail(std::string(field) + " too large");
      ++pos;
    }
    return v;
  };
  PnmHeader h;
  if (bytes.size() < 2) fail("missing magic number");
  h.magic = bytes.substr(0, 2);
  if (h.magic != "P5" && h.magic != "P6") fail("unsupported magic '" + h.magic + "'");
  pos = 2;
  h.width = number("width");
  h.height = number("height");
  h.maxval = static_cast<std::uint32_t>(number("maxval"));
  if (h.width == 0 || h.height == 0) fail("zero extent");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    fail("expected whitespace after maxval");
  h.data_offset = pos + 1;
  return h;
}

inline std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline void spit(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw ParseError("write failed for " + path);
}

inline void require_payload(const PnmHeader& h, const std::string& bytes, std::size_t need, const std::string& what) {
  const std::size_t have = bytes.size() - std::min(bytes.size(), h.data_offset);
  if (have < need) {
    throw ParseError(what + ": truncated payload at byte " + std::to_string(h.data_offset) + ": expected " +
                     std::to_string(need) + " bytes, got " + std::to_string(have));
  }
}

}  // namespace detail

inline RgbImage decode_ppm(const std::string& bytes, const std::string& what = "ppm") {
  const auto h = detail::parse_pnm_header(bytes, what);
  if (h.magic != "P6") throw ParseError(what + ": expected P6, got " + h.magic + " at byte 0");
  if (h.maxval != 255) throw ParseError(what + ": maxval must be 255, got " + std::to_string(h.maxval));
  const std::size_t need = h.width * h.height * 3;
  detail::require_payload(h, bytes, need, what);
  RgbImage img{h.height, h.width, {}};
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset),
                 bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset + need));
  return img;
}

inline std::string encode_ppm(const RgbImage& img) {
  if (img.rgb.size() != img.height * img.width * 3) throw ValidationError("ppm: pixel buffer size mismatch");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.rgb.begin(), img.rgb.end());
  return out;
}

inline GrayImage decode_pgm(const std::string& bytes, const std::string& what = "pgm") {
  const auto h = detail::parse_pnm_header(bytes, what);
  if (h.magic != "P5") throw ParseError(what + ": expected P5, got " + h.magic + " at byte 0");
  if (h.maxval != 255 && h.maxval != 65535)
    throw ParseError(what + ": maxval must be 255 or 65535, got " + std::to_string(h.maxval));
  const std::size_t bpp = h.maxval == 255 ? 1 : 2;
  const std::size_t n = h.width * h.height;
  detail::require_payload(h, bytes, n * bpp, what);
  GrayImage img{h.height, h.width, h.maxval, std::vector<std::uint16_t>(n)};
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (std::size_t i = 0; i < n; ++i) {
    img.values[i] = bpp == 1 ? p[i] : static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
  }
  return img;
}

inline std::string encode_pgm(const GrayImage& img) {
  if (img.values.size() != img.height * img.width) throw ValidationError("pgm: pixel buffer size mismatch");
  if (img.maxval != 255 && img.maxval != 65535) throw ValidationError("pgm: maxval must be 255 or 65535");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                    std::to_string(img.maxval) + "\n";
  for (auto v : img.values) {
    if (img.maxval == 255) {
      if (v > 255) throw ValidationError("pgm: value " + std::to_string(v) + " exceeds maxval 255");
      out.push_back(static_cast<char>(v));
    } else {
      out.push_back(static_cast<char>(v >> 8));
      out.push_back(static_cast<char>(v & 0xFF));
    }
  }
  return out;
}

inline RgbImage read_ppm(const std::string& path) { return decode_ppm(detail::slurp(path), path); }
inline void write_ppm(const std::string& path, const RgbImage& img) { detail::spit(path, encode_ppm(img)); }
inline GrayImage read_pgm(const std::string& path) { return decode_pgm(detail::slurp(path), path); }
inline void write_pgm(const std::string& path, const GrayImage& img) { detail::spit(path, encode_pgm(img)); }

// 16-bit millimetres -> metres; 0 stays 0 (invalid).
inline std::vector<float> depth_from_pgm(const GrayImage& img) {
  std::vector<float> out(img.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(img.values[i]) / 1000.0f;
  return out;
}

inline GrayImage depth_to_pgm(std::span<const float> metres, std::size_t h, std::size_t w) {
  GrayImage g{h, w, 65535, std::vector<std::uint16_t>(metres.size())};
  for (std::size_t i = 0; i < metres.size(); ++i) {
    const double mm = std::round(static_cast<double>(metres[i]) * 1000.0);
    g.values[i] = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
  }
  return g;
}

inline GrayImage mask_to_pgm(std::span<const std::int32_t> mask, std::size_t h, std::size_t w) {
  GrayImage g{h, w, 255, std::vector<std::uint16_t>(mask.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] < 0 || mask[i] > 255) throw ValidationError("mask id " + std::to_string(mask[i]) + " does not fit 8 bits");
    g.values[i] = static_cast<std::uint16_t>(mask[i]);
  }
  return g;
}

inline std::vector<std::int32_t> mask_from_pgm(const GrayImage& g) {
  return std::vector<std::int32_t>(g.values.begin(), g.values.end());
}

// [1, 3, H, W] in [0, 1].
template <Scalar T>
Array<T> image_to_tensor(const RgbImage& img) {
  Array<T> out(Shape{1, 3, img.height, img.width});
  auto d = out.data();
  const std::size_t plane = img.height * img.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) d[c * plane + i] = static_cast<T>(img.rgb[i * 3 + c]) / T(255);
  return out;
}

// [3, H, W] or [1, 3, H, W] in [0, 1] -> 8-bit, rounded.
template <Scalar T>
RgbImage tensor_to_image(const Array<T>& t) {
  const std::size_t r = t.rank();
  if (!(r == 3 || (r == 4 && t.dim(0) == 1)) || t.dim(r - 3) != 3)
    throw ShapeError("tensor_to_image: expected [3,H,W] or [1,3,H,W], got " + to_string(t.shape()));
  RgbImage img{t.dim(r - 2), t.dim(r - 1), {}};
  const std::size_t plane = img.height * img.width;
  img.rgb.resize(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(t[c * plane + i]), 0.0, 1.0);
      img.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

using Rgb = std::array<std::uint8_t, 3>;

struct Palette {
  std::vector<Rgb> colors;
  const Rgb& at(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= colors.size())
      throw ValidationError("palette: unknown class id " + std::to_string(id));
    return colors[static_cast<std::size_t>(id)];
  }
};

// Walkable floor is blue, glass door gray, glass wall red, id 0 black.
inline Palette general_palette() {
  return {{{0, 0, 0},       {200, 200, 120}, {0, 0, 255},     {160, 160, 40}, {120, 60, 160},
           {60, 160, 160},  {80, 200, 255},  {150, 90, 40},   {255, 160, 0},  {0, 200, 0},
           {220, 60, 160},  {110, 70, 20},   {255, 255, 255}}};
}

inline Palette trans_palette() {
  return {{{0, 0, 0},      {200, 120, 60}, {0, 180, 180}, {120, 120, 255}, {255, 255, 0},  {128, 128, 128},
           {255, 0, 255},  {0, 255, 0},    {255, 0, 0},   {0, 120, 255},   {180, 255, 120}, {255, 150, 150}}};
}

// out = (1 - alpha) * image + alpha * palette[mask]; id 0 pixels untouched.
inline RgbImage render_overlay(const RgbImage& image, std::span<const std::int32_t> mask, const Palette& palette,
                               double alpha = 0.5) {
  if (mask.size() != image.height * image.width)
    throw ValidationError("render_overlay: mask has " + std::to_string(mask.size()) + " pixels, image has " +
                          std::to_string(image.height * image.width));
  if (!(alpha >= 0 && alpha <= 1)) throw ValidationError("render_overlay: alpha must lie in [0, 1]");
  RgbImage out = image;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const Rgb& c = palette.at(mask[i]);
    if (mask[i] == 0) continue;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = (1.0 - alpha) * image.rgb[i * 3 + ch] + alpha * c[ch];
      out.rgb[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

}  // namespace t4t
