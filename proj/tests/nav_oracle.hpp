#pragma once

// Straight-line reference for decide_feedback over the discretised grid
// mean-depth x stuff-ratio x walkable triples, built independently of the
// engine's helper functions.

#include <array>
#include <string>
#include <vector>

#include "t4t/nav.hpp"

namespace t4t::oracle {

struct GridCase {
  double depth;
  double stuff;                  // glass wall ratio over the whole frame
  std::array<double, 3> walk;    // left, forward, right band ratios
};

inline constexpr std::size_t kRows = 10, kCols = 30;  // bands of 10 x 10

inline std::vector<GridCase> grid() {
  std::vector<GridCase> out;
  for (double d : {0.5, 1.0, 1.5})
    for (double s : {0.0, 0.2, 0.5})
      for (double l : {0.0, 0.2, 0.5})
        for (double f : {0.0, 0.2, 0.5})
          for (double r : {0.0, 0.2, 0.5}) out.push_back({d, s, {l, f, r}});
  return out;
}

// Floor fills the first ratio*100 pixels of each band; glass wall fills the
// first stuff*300 pixels in raster order; one chair pixel sits top-right.
inline SegFrame make_frame(const GridCase& c) {
  SegFrame f{kRows, kCols, std::vector<std::int32_t>(kRows * kCols, general::kWall),
             std::vector<std::int32_t>(kRows * kCols, trans::kBackground),
             std::vector<float>(kRows * kCols, static_cast<float>(c.depth))};
  for (std::size_t b = 0; b < 3; ++b) {
    const auto n = static_cast<std::size_t>(c.walk[b] * 100 + 0.5);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t y = kRows - 1 - k / 10, x = b * 10 + k % 10;
      f.general[y * kCols + x] = general::kFloor;
    }
  }
  const auto ns = static_cast<std::size_t>(c.stuff * kRows * kCols + 0.5);
  for (std::size_t k = 0; k < ns; ++k) f.trans[k] = trans::kGlassWall;
  f.general[kCols - 1] = general::kChair;
  return f;
}

// Expected (kind, payload) straight from the case parameters.
inline std::pair<std::string, std::string> expected(const GridCase& c, const NavConfig& cfg) {
  if (c.depth < cfg.theta_obstacle) return {"vibration", "obstacle"};
  if (c.stuff > cfg.theta_trans) return {"speech_stuff", "glass wall"};
  const double l = c.walk[0], f = c.walk[1], r = c.walk[2];
  double m = f;
  if (l > m) m = l;
  if (r > m) m = r;
  if (m > cfg.theta_walkable) {
    if (f == m) return {"speech_direction", "forward"};
    if (l == m) return {"speech_direction", "left"};
    return {"speech_direction", "right"};
  }
  return {"speech_nearest", "chair"};
}

}  // namespace t4t::oracle
