#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include "t4t/image_io.hpp"
#include "t4t/model.hpp"
#include "t4t/nav.hpp"

namespace t4t {

struct RgbdFrame {
  std::size_t index = 0;
  double timestamp = 0;
  RgbImage rgb;
  std::vector<float> depth;  // metres
  std::optional<std::vector<std::int32_t>> general, trans;
};

// One replay entry; loading is deferred so bad files surface as skips.
struct FrameEntry {
  std::size_t index = 0;
  double timestamp = 0;
  std::function<RgbdFrame()> load;
};

// Directory of NNNN.ppm + NNNN.pgm (16-bit mm). Optional precomputed masks
// NNNN.general.pgm / NNNN.trans.pgm (8-bit ids). Frame i is stamped i / fps.
inline std::vector<FrameEntry> scan_replay_dir(const std::string& dir, double fps) {
  namespace fs = std::filesystem;
  if (!(fps > 0)) throw ValidationError("replay: fps must be positive");
  if (!fs::is_directory(dir)) throw ValidationError("replay: " + dir + " is not a directory");
  static const std::regex kFrame(R"((\d{4,})\.ppm)");
  std::vector<std::pair<std::size_t, std::string>> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, kFrame)) stems.emplace_back(std::stoul(m[1].str()), m[1].str());
  }
  std::sort(stems.begin(), stems.end());
  std::vector<FrameEntry> out;
  for (std::size_t k = 0; k < stems.size(); ++k) {
    const std::string base = (fs::path(dir) / stems[k].second).string();
    const std::size_t index = stems[k].first;
    out.push_back({index, static_cast<double>(k) / fps, [base, index, k, fps]() {
                     RgbdFrame f;
                     f.index = index;
                     f.timestamp = static_cast<double>(k) / fps;
                     f.rgb = read_ppm(base + ".ppm");
                     const auto depth = read_pgm(base + ".pgm");
                     if (depth.maxval != 65535) throw ParseError(base + ".pgm: depth must be 16-bit (maxval 65535)");
                     if (depth.height != f.rgb.height || depth.width != f.rgb.width)
                       throw ValidationError(base + ": depth and colour extents differ");
                     f.depth = depth_from_pgm(depth);
                     for (const char* head : {"general", "trans"}) {
                       const std::string p = base + "." + head + ".pgm";
                       if (!std::filesystem::exists(p)) continue;
                       auto m = mask_from_pgm(read_pgm(p));
                       if (m.size() != f.depth.size()) throw ValidationError(p + ": mask extent differs");
                       (std::string(head) == "general" ? f.general : f.trans) = std::move(m);
                     }
                     return f;
                   }});
  }
  return out;
}

using Segmenter = std::function<SegFrame(const RgbdFrame&)>;

// Uses the masks stored next to each frame.
inline SegFrame precomputed_segmenter(const RgbdFrame& f) {
  if (!f.general || !f.trans)
    throw ValidationError("frame " + std::to_string(f.index) + ": precomputed masks missing");
  return {f.rgb.height, f.rgb.width, *f.general, *f.trans, f.depth};
}

template <Scalar T>
Segmenter model_segmenter(const Trans4Trans<T>& model) {
  if (!model.config().dual_head()) throw ConfigError("navsim: the model must have both heads");
  return [&model](const RgbdFrame& f) {
    const auto masks = predict_masks(model, image_to_tensor<T>(f.rgb));
    return SegFrame{f.rgb.height, f.rgb.width, masks[0], masks[1], f.depth};
  };
}

struct SessionResult {
  std::vector<FeedbackEvent> events;
  std::size_t skipped = 0;
  std::size_t dropped = 0;  // frames overwritten before a tick consumed them
};

// Ticks at k * interval for every tick before `duration`. Frames stamped at
// or before a tick are pushed into a capacity-one slot in time order; the
// tick processes whatever is newest. Each processed frame yields one event
// line; failures yield a skip line. Log lines are JSON objects.
inline SessionResult run_session(const std::vector<FrameEntry>& frames, double duration, const NavConfig& cfg,
                                 const Segmenter& segment, std::ostream* log = nullptr) {
  cfg.validate();
  SessionResult res;
  LatestSlot<const FrameEntry*> slot;
  std::size_t next = 0;
  for (std::size_t k = 0;; ++k) {
    const double tick = static_cast<double>(k) * cfg.interval;
    if (!(tick < duration)) break;
    while (next < frames.size() && frames[next].timestamp <= tick + 1e-9) {
      if (slot.put(&frames[next])) ++res.dropped;
      ++next;
    }
    const auto entry = slot.take();
    nlohmann::json line;
    if (!entry) {
      ++res.skipped;
      line = {{"t", tick}, {"kind", "skip"}, {"payload", "no frame available"}};
    } else {
      try {
        const RgbdFrame f = (*entry)->load();
        const auto ev = decide_feedback(segment(f), cfg, tick);
        res.events.push_back(ev);
        line = to_json(ev);
        line["frame"] = f.index;
      } catch (const Error& e) {
        ++res.skipped;
        line = {{"t", tick}, {"kind", "skip"}, {"payload", e.what()}, {"frame", (*entry)->index}};
      }
    }
    if (log) *log << line.dump() << '\n';
  }
  return res;
}

// Seeded five-phase walkway: open corridor, glass door ahead, close
// obstacle, path bending left, then only furniture in view.
struct WalkwayFrame {
  RgbImage rgb;
  std::vector<float> depth;
  std::vector<std::int32_t> general, trans;
};

inline WalkwayFrame walkway_frame(std::uint64_t seed, std::size_t i, std::size_t frames, std::size_t h,
                                  std::size_t w) {
  std::mt19937_64 rng(seed * 1000003ULL + i);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  const std::size_t phase = std::min<std::size_t>(4, i * 5 / std::max<std::size_t>(frames, 1));
  WalkwayFrame f;
  const std::size_t n = h * w;
  f.general.assign(n, general::kWall);
  f.trans.assign(n, trans::kBackground);
  f.depth.assign(n, 0.0f);
  const std::size_t horizon = h * 2 / 5;
  const std::size_t third = w / 3;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      double d = 3.5 + jitter(rng);
      std::int32_t g = y < h / 8 ? general::kCeiling : general::kWall;
      std::int32_t t = trans::kBackground;
      const bool low = y >= horizon;
      switch (phase) {
        case 0:  // corridor straight ahead
          if (low && x >= third && x < 2 * third) g = general::kFloor;
          break;
        case 1:  // glass door filling the centre
          if (low && x >= third && x < 2 * third && y >= h * 4 / 5) g = general::kFloor;
          if (y >= h / 8 && y < h * 4 / 5 && x >= w / 5 && x < w * 4 / 5) {
            t = trans::kGlassDoor;
            d = (x + y) % 3 == 0 ? 0.0 : 2.5 + jitter(rng);  // glass voids depth
          }
          break;
        case 2:  // obstacle right in front
          d = 0.6 + jitter(rng);
          if (low && x >= third && x < 2 * third) g = general::kFloor;
          break;
        case 3:  // path bends left
          if (low && x < third) g = general::kFloor;
          break;
        default:  // furniture only: chair near, door far
          if (low && x < third / 4) g = general::kFloor;
          if (y >= h / 2 && x >= w / 4 && x < w / 2) {
            g = general::kChair;
            d = 1.5 + jitter(rng);
          }
          if (y >= h / 5 && y < h * 4 / 5 && x >= w * 2 / 3 && x < w * 5 / 6) {
            g = general::kDoor;
            d = 3.0 + jitter(rng);
          }
          break;
      }
      f.general[p] = g;
      f.trans[p] = t;
      f.depth[p] = static_cast<float>(d);
    }
  }
  const auto gp = general_palette();
  f.rgb = {h, w, std::vector<std::uint8_t>(n * 3)};
  std::uniform_int_distribution<int> grain(-6, 6);
  for (std::size_t p = 0; p < n; ++p) {
    Rgb c = gp.at(f.general[p]);
    if (f.trans[p] != trans::kBackground) c = {150, 170, 175};
    if (f.general[p] == general::kWall && f.trans[p] == trans::kBackground) c = {190, 180, 160};
    for (std::size_t ch = 0; ch < 3; ++ch) f.rgb.rgb[p * 3 + ch] = static_cast<std::uint8_t>(std::clamp(c[ch] + grain(rng), 0, 255));
  }
  return f;
}

// Writes NNNN.ppm, NNNN.pgm and the precomputed mask files into dir.
inline void write_walkway(const std::string& dir, std::uint64_t seed, std::size_t frames, std::size_t h,
                          std::size_t w) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames; ++i) {
    const auto f = walkway_frame(seed, i, frames, h, w);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    const std::string base = (std::filesystem::path(dir) / stem).string();
    write_ppm(base + ".ppm", f.rgb);
    write_pgm(base + ".pgm", depth_to_pgm(f.depth, h, w));
    write_pgm(base + ".general.pgm", mask_to_pgm(f.general, h, w));
    write_pgm(base + ".trans.pgm", mask_to_pgm(f.trans, h, w));
  }
}

}  // namespace t4t
