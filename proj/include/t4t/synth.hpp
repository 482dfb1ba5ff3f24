#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "t4t/array.hpp"
#include "t4t/error.hpp"
#include "t4t/labels.hpp"

namespace t4t {

struct Rect {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open
  bool contains(std::size_t y, std::size_t x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

// Synthetic indoor scene: clutter band on top, wall, floor band, an opaque
// door, and one glass pane whose pixels are the wall behind it blended with
// a faint class tint, framed by a thin low-contrast border.
struct SynthSample {
  Array<float> image;                     // [3, H, W] in [0, 1]
  Array<float> background;                // scene before the pane was painted
  std::vector<std::int32_t> general_mask; // {clutter, floor, wall, door}
  std::vector<std::int32_t> trans_mask;   // {background, window, glass door, glass wall}
  Rect pane;
  std::int32_t pane_class = 0;
  std::size_t height = 0, width = 0;
};

inline constexpr std::array<std::int32_t, 4> kSynthGeneralIds{general::kClutter, general::kFloor,
                                                              general::kWall, general::kDoor};
inline constexpr std::array<std::int32_t, 4> kSynthTransIds{trans::kBackground, trans::kWindow,
                                                            trans::kGlassDoor, trans::kGlassWall};

namespace detail {

struct SceneRng {
  std::mt19937_64 eng;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  std::size_t pick(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng);
  }
};

// Snaps to the 4-pixel grid the encoder's first stage sees.
inline std::size_t snap4(std::size_t v) { return v / 4 * 4; }

}  // namespace detail

inline SynthSample generate_synth_sample(std::uint64_t seed, std::size_t index, std::size_t h, std::size_t w) {
  detail::SceneRng rng{std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + index)};
  SynthSample s;
  s.height = h;
  s.width = w;
  s.general_mask.assign(h * w, general::kWall);
  s.trans_mask.assign(h * w, trans::kBackground);

  const std::size_t ceil_end = detail::snap4(rng.pick(h / 8, h / 4));
  const std::size_t floor_start = detail::snap4(rng.pick(h * 9 / 16, h * 3 / 4));
  const bool door_left = rng.pick(0, 1) == 0;
  const std::size_t half = w / 2;
  auto column_span = [&](std::size_t lo, std::size_t hi, std::size_t width) {
    width = std::min(width, hi - lo);
    const std::size_t x0 = detail::snap4(rng.pick(lo, hi - width));
    return std::pair{x0, x0 + width};
  };

  const std::size_t door_w = std::max<std::size_t>(4, detail::snap4(rng.pick(w / 8, w / 5)));
  auto [dx0, dx1] = door_left ? column_span(4, half - 4, door_w) : column_span(half + 4, w - 4, door_w);
  const Rect door{detail::snap4(ceil_end + (floor_start - ceil_end) / 4), dx0, floor_start, dx1};

  // Pane class cycles with the index so every class appears in any 3 samples.
  const std::int32_t kinds[3] = {trans::kWindow, trans::kGlassDoor, trans::kGlassWall};
  s.pane_class = kinds[(index + seed) % 3];
  const std::size_t pl = door_left ? half : 0, pr = door_left ? w : half;
  const std::size_t wall_h = floor_start - ceil_end;
  Rect pane;
  if (s.pane_class == trans::kWindow) {
    const std::size_t pw = detail::snap4(rng.pick(w / 6, w / 4)) + 4;
    auto [x0, x1] = column_span(pl + 4, pr - 4, pw);
    const std::size_t ph = std::max<std::size_t>(8, detail::snap4(wall_h / 2));
    const std::size_t y0 = ceil_end + 4;
    pane = {y0, x0, std::min(y0 + ph, floor_start - 4), x1};
  } else if (s.pane_class == trans::kGlassDoor) {
    const std::size_t pw = detail::snap4(rng.pick(w / 6, w / 4)) + 4;
    auto [x0, x1] = column_span(pl + 4, pr - 4, pw);
    pane = {detail::snap4(ceil_end + wall_h / 4), x0, floor_start, x1};
  } else {
    const std::size_t pw = detail::snap4(std::min(pr - pl - 8, (pr - pl) * 3 / 4));
    auto [x0, x1] = column_span(pl + 4, pr - 4, pw);
    pane = {ceil_end, x0, floor_start, x1};
  }
  s.pane = pane;

  // Per-scene colours.
  auto jitter = [&](std::array<double, 3> c) {
    for (auto& v : c) v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    return c;
  };
  const auto clutter_c = jitter({0.25, 0.22, 0.20});
  const auto wall_c = jitter({0.78, 0.74, 0.64});
  const auto floor_c = jitter({0.45, 0.50, 0.58});
  const auto door_c = jitter({0.50, 0.32, 0.18});
  const std::array<double, 3> tint = s.pane_class == trans::kWindow      ? std::array{0.55, 0.75, 1.00}
                                     : s.pane_class == trans::kGlassDoor ? std::array{0.55, 0.95, 0.65}
                                                                          : std::array{1.00, 0.60, 0.65};

  s.background = Array<float>(Shape{3, h, w});
  auto bg = s.background.data();
  std::uniform_real_distribution<double> noise(-0.02, 0.02);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::array<double, 3> c;
      std::int32_t label;
      if (y < ceil_end) {
        c = clutter_c;
        label = general::kClutter;
        if (((x / 6) + (y / 3)) % 5 == 0) c = {c[0] + 0.08, c[1] + 0.06, c[2] + 0.04};
      } else if (y >= floor_start) {
        c = floor_c;
        label = general::kFloor;
        if (((x / 8) + (y / 8)) % 2 == 0) c = {c[0] - 0.05, c[1] - 0.05, c[2] - 0.05};
      } else if (door.contains(y, x)) {
        c = door_c;
        label = general::kDoor;
        if (x == door.x0 || x + 1 == door.x1) c = {c[0] - 0.1, c[1] - 0.1, c[2] - 0.1};
      } else {
        c = wall_c;
        label = general::kWall;
        if (x % 12 < 2) c = {c[0] - 0.04, c[1] - 0.04, c[2] - 0.04};
      }
      s.general_mask[y * w + x] = label;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        bg[(ch * h + y) * w + x] = static_cast<float>(std::clamp(c[ch] + noise(rng.eng), 0.0, 1.0));
      }
    }
  }

  s.image = s.background.detach();
  auto im = s.image.data();
  for (std::size_t y = pane.y0; y < pane.y1; ++y) {
    for (std::size_t x = pane.x0; x < pane.x1; ++x) {
      s.trans_mask[y * w + x] = s.pane_class;
      const bool frame = y == pane.y0 || y + 1 == pane.y1 || x == pane.x0 || x + 1 == pane.x1;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t i = (ch * h + y) * w + x;
        const double b = bg[i];
        const double v = frame ? 0.85 * b : 0.65 * b + 0.35 * tint[ch];
        im[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

inline std::vector<SynthSample> generate_synth_dataset(std::uint64_t seed, std::size_t count, std::size_t h,
                                                       std::size_t w) {
  if (h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0) {
    throw ValidationError("synth: extents must be positive multiples of 32, got " + std::to_string(h) + "x" +
                          std::to_string(w));
  }
  std::vector<SynthSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_synth_sample(seed, i, h, w));
  return out;
}

// Stacks the given samples into a [B, 3, H, W] batch plus flattened masks.
struct SynthBatch {
  Array<float> images;
  std::vector<std::int32_t> general;
  std::vector<std::int32_t> trans;
};

inline SynthBatch make_batch(const std::vector<SynthSample>& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("make_batch: empty batch");
  const std::size_t h = data[indices[0]].height, w = data[indices[0]].width;
  SynthBatch b;
  std::vector<float> pixels;
  pixels.reserve(indices.size() * 3 * h * w);
  for (auto i : indices) {
    const auto& s = data.at(i);
    if (s.height != h || s.width != w) throw ShapeError("make_batch: samples differ in extent");
    pixels.insert(pixels.end(), s.image.data().begin(), s.image.data().end());
    b.general.insert(b.general.end(), s.general_mask.begin(), s.general_mask.end());
    b.trans.insert(b.trans.end(), s.trans_mask.begin(), s.trans_mask.end());
  }
  b.images = Array<float>(Shape{indices.size(), 3, h, w}, std::move(pixels));
  return b;
}

}  // namespace t4t
