#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4t/error.hpp"
#include "t4t/labels.hpp"

namespace t4t {

struct NavConfig {
  double theta_obstacle = 1.0;  // metres
  double theta_trans = 0.25;    // area ratio
  double theta_walkable = 0.30; // area ratio
  double interval = 2.0;        // seconds
  std::vector<std::int32_t> g_path{general::kFloor};
  std::vector<std::int32_t> g_object{general::kBeam,  general::kColumn, general::kWindow,
                                     general::kDoor,  general::kTable,  general::kChair,
                                     general::kSofa,  general::kBookcase, general::kBoard};
  std::vector<std::int32_t> t_stuff{trans::kWindow, trans::kGlassDoor, trans::kGlassWall};
  std::vector<std::int32_t> t_thing{trans::kShelf, trans::kJarTank, trans::kFreezer, trans::kEyeglass,
                                    trans::kCup,   trans::kBowl,    trans::kBottle,  trans::kBox};

  void validate() const {
    auto bad = [](const std::string& m) { throw ConfigError("nav config: " + m); };
    if (!(theta_obstacle > 0) || !std::isfinite(theta_obstacle)) bad("theta_obstacle must be positive");
    if (!(theta_trans >= 0 && theta_trans <= 1)) bad("theta_trans must lie in [0, 1]");
    if (!(theta_walkable >= 0 && theta_walkable <= 1)) bad("theta_walkable must lie in [0, 1]");
    if (!(interval > 0) || !std::isfinite(interval)) bad("interval must be positive");
    auto check_ids = [&](const std::vector<std::int32_t>& ids, std::size_t k, const char* name) {
      for (auto id : ids)
        if (id < 0 || id >= static_cast<std::int32_t>(k)) bad(std::string(name) + " holds unknown id " + std::to_string(id));
    };
    check_ids(g_path, general::kNames.size(), "g_path");
    check_ids(g_object, general::kNames.size(), "g_object");
    check_ids(t_stuff, trans::kNames.size(), "t_stuff");
    check_ids(t_thing, trans::kNames.size(), "t_thing");
    for (auto s : t_stuff)
      if (std::find(t_thing.begin(), t_thing.end(), s) != t_thing.end())
        bad("t_stuff and t_thing overlap on " + class_name(true, s));
    for (auto p : g_path)
      if (std::find(g_object.begin(), g_object.end(), p) != g_object.end())
        bad("g_path and g_object overlap on " + class_name(false, p));
  }
};

namespace detail {

inline std::int32_t class_id_from_json(const nlohmann::json& j, bool transparency) {
  if (j.is_number_integer()) return j.get<std::int32_t>();
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (transparency) {
      for (std::size_t i = 0; i < trans::kNames.size(); ++i)
        if (trans::kNames[i] == name) return static_cast<std::int32_t>(i);
    } else {
      for (std::size_t i = 0; i < general::kNames.size(); ++i)
        if (general::kNames[i] == name) return static_cast<std::int32_t>(i);
    }
    throw ConfigError("nav config: unknown class name '" + name + "'");
  }
  throw ConfigError("nav config: class entries must be ids or names");
}

}  // namespace detail

// Flat JSON object; any subset of keys overrides the defaults. Class sets
// accept ids or names.
inline NavConfig nav_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("nav config: expected a JSON object");
  NavConfig c;
  for (const auto& [key, value] : j.items()) {
    auto number = [&]() {
      if (!value.is_number()) throw ConfigError("nav config: " + key + " must be a number");
      return value.get<double>();
    };
    auto ids = [&](bool transparency) {
      if (!value.is_array()) throw ConfigError("nav config: " + key + " must be an array");
      std::vector<std::int32_t> out;
      for (const auto& e : value) out.push_back(detail::class_id_from_json(e, transparency));
      return out;
    };
    if (key == "theta_obstacle") c.theta_obstacle = number();
    else if (key == "theta_trans") c.theta_trans = number();
    else if (key == "theta_walkable") c.theta_walkable = number();
    else if (key == "interval") c.interval = number();
    else if (key == "g_path") c.g_path = ids(false);
    else if (key == "g_object") c.g_object = ids(false);
    else if (key == "t_stuff") c.t_stuff = ids(true);
    else if (key == "t_thing") c.t_thing = ids(true);
    else throw ConfigError("nav config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

inline NavConfig load_nav_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open nav config " + path);
  try {
    return nav_config_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("nav config " + path + ": " + e.what());
  }
}

inline nlohmann::json to_json(const NavConfig& c) {
  return {{"theta_obstacle", c.theta_obstacle}, {"theta_trans", c.theta_trans},
          {"theta_walkable", c.theta_walkable}, {"interval", c.interval},
          {"g_path", c.g_path},                 {"g_object", c.g_object},
          {"t_stuff", c.t_stuff},               {"t_thing", c.t_thing}};
}

struct SegFrame {
  std::size_t height = 0, width = 0;
  std::vector<std::int32_t> general;  // ids in [0, 13)
  std::vector<std::int32_t> trans;    // ids in [0, 12)
  std::vector<float> depth;           // metres, 0 = invalid

  void validate() const {
    const std::size_t n = height * width;
    if (n == 0) throw ValidationError("seg frame: empty extent");
    if (general.size() != n || trans.size() != n || depth.size() != n) {
      throw ValidationError("seg frame: planes disagree with " + std::to_string(height) + "x" +
                            std::to_string(width) + " (general " + std::to_string(general.size()) + ", trans " +
                            std::to_string(trans.size()) + ", depth " + std::to_string(depth.size()) + ")");
    }
    for (auto v : general)
      if (v < 0 || v >= static_cast<std::int32_t>(general::kNames.size()))
        throw ValidationError("seg frame: general id " + std::to_string(v) + " out of range");
    for (auto v : trans)
      if (v < 0 || v >= static_cast<std::int32_t>(trans::kNames.size()))
        throw ValidationError("seg frame: transparency id " + std::to_string(v) + " out of range");
  }
};

struct WalkableRatios {
  double left = 0, forward = 0, right = 0;
};

// Equal-width vertical thirds; band b covers columns [b*W/3, (b+1)*W/3).
inline WalkableRatios partition_walkable(std::span<const std::int32_t> mask, std::size_t height, std::size_t width,
                                         std::span<const std::int32_t> path = std::span<const std::int32_t>()) {
  if (width < 3) throw ValidationError("partition_walkable: width " + std::to_string(width) + " < 3");
  if (mask.size() != height * width) throw ValidationError("partition_walkable: mask size mismatch");
  static constexpr std::int32_t kDefaultPath[] = {general::kFloor};
  if (path.empty()) path = kDefaultPath;
  std::size_t counts[3] = {0, 0, 0};
  std::size_t bounds[4] = {0, width / 3, 2 * width / 3, width};
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t x = bounds[b]; x < bounds[b + 1]; ++x) {
        const auto v = mask[y * width + x];
        if (std::find(path.begin(), path.end(), v) != path.end()) ++counts[b];
      }
    }
  }
  auto ratio = [&](std::size_t b) {
    const std::size_t px = (bounds[b + 1] - bounds[b]) * height;
    return px ? static_cast<double>(counts[b]) / static_cast<double>(px) : 0.0;
  };
  return {ratio(0), ratio(1), ratio(2)};
}

struct ClassRatio {
  std::int32_t id;
  double ratio;
};

inline std::vector<ClassRatio> class_area_ratios(std::span<const std::int32_t> mask,
                                                 std::span<const std::int32_t> class_set) {
  std::vector<ClassRatio> out;
  if (class_set.empty()) return out;
  for (auto c : class_set) {
    const auto n = std::count(mask.begin(), mask.end(), c);
    out.push_back({c, mask.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(mask.size())});
  }
  return out;
}

// Mean over valid (> 0) pixels; nullopt when none are valid.
inline std::optional<double> mean_depth(std::span<const float> depth) {
  double sum = 0;
  std::size_t n = 0;
  for (float d : depth) {
    if (d > 0 && std::isfinite(d)) {
      sum += d;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

struct NearestObject {
  bool transparency = false;  // which head the class belongs to
  std::int32_t id = 0;
  double median_depth = 0;    // +inf when the class has no valid depth
  std::size_t pixels = 0;
  std::string name() const { return class_name(transparency, id); }
};

namespace detail {

inline double median(std::vector<float>& v) {
  if (v.empty()) return std::numeric_limits<double>::infinity();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Candidate classes: cfg.t_thing on the transparency mask and cfg.g_object
// on the general mask. Smallest median valid depth wins; ties go to the
// larger pixel count, then to table order (general ids, then transparency ids).
inline std::optional<NearestObject> nearest_object(const SegFrame& seg, const NavConfig& cfg) {
  std::optional<NearestObject> best;
  auto consider = [&](bool transparency, std::int32_t id, const std::vector<std::int32_t>& mask) {
    std::vector<float> depths;
    std::size_t pixels = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] != id) continue;
      ++pixels;
      if (seg.depth[i] > 0 && std::isfinite(seg.depth[i])) depths.push_back(seg.depth[i]);
    }
    if (pixels == 0) return;
    NearestObject cand{transparency, id, detail::median(depths), pixels};
    if (!best || cand.median_depth < best->median_depth ||
        (cand.median_depth == best->median_depth && cand.pixels > best->pixels)) {
      best = cand;
    }
  };
  for (std::int32_t id = 0; id < static_cast<std::int32_t>(general::kNames.size()); ++id)
    if (std::find(cfg.g_object.begin(), cfg.g_object.end(), id) != cfg.g_object.end()) consider(false, id, seg.general);
  for (std::int32_t id = 0; id < static_cast<std::int32_t>(trans::kNames.size()); ++id)
    if (std::find(cfg.t_thing.begin(), cfg.t_thing.end(), id) != cfg.t_thing.end()) consider(true, id, seg.trans);
  return best;
}

enum class FeedbackKind { Vibration, SpeechStuff, SpeechDirection, SpeechNearest, SpeechClear };
enum class Direction { Left, Forward, Right };

inline const char* to_string(FeedbackKind k) {
  switch (k) {
    case FeedbackKind::Vibration: return "vibration";
    case FeedbackKind::SpeechStuff: return "speech_stuff";
    case FeedbackKind::SpeechDirection: return "speech_direction";
    case FeedbackKind::SpeechNearest: return "speech_nearest";
    case FeedbackKind::SpeechClear: return "speech_clear";
  }
  return "?";
}

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::Left: return "left";
    case Direction::Forward: return "forward";
    case Direction::Right: return "right";
  }
  return "?";
}

struct Evidence {
  std::optional<double> mean_depth;
  std::vector<ClassRatio> stuff_ratios;
  WalkableRatios walkable;
  std::optional<double> nearest_depth;
};

struct FeedbackEvent {
  FeedbackKind kind = FeedbackKind::SpeechClear;
  double timestamp = 0;
  std::int32_t stuff_class = -1;             // SpeechStuff
  Direction direction = Direction::Forward;  // SpeechDirection
  std::optional<NearestObject> nearest;      // SpeechNearest
  Evidence evidence;

  std::string payload() const {
    switch (kind) {
      case FeedbackKind::Vibration: return "obstacle";
      case FeedbackKind::SpeechStuff: return class_name(true, stuff_class);
      case FeedbackKind::SpeechDirection: return to_string(direction);
      case FeedbackKind::SpeechNearest: return nearest->name();
      case FeedbackKind::SpeechClear: return "clear";
    }
    return "";
  }
};

// Argmax with ties resolved forward, then left, then right.
inline Direction best_direction(const WalkableRatios& r) {
  Direction d = Direction::Forward;
  double best = r.forward;
  if (r.left > best) {
    d = Direction::Left;
    best = r.left;
  }
  if (r.right > best) d = Direction::Right;
  return d;
}

inline double max_ratio(const WalkableRatios& r) { return std::max({r.left, r.forward, r.right}); }

inline FeedbackEvent decide_feedback(const SegFrame& seg, const NavConfig& cfg, double timestamp = 0) {
  seg.validate();
  FeedbackEvent ev;
  ev.timestamp = timestamp;
  ev.evidence.mean_depth = mean_depth(seg.depth);
  ev.evidence.stuff_ratios = class_area_ratios(seg.trans, cfg.t_stuff);
  ev.evidence.walkable = partition_walkable(seg.general, seg.height, seg.width, cfg.g_path);

  if (ev.evidence.mean_depth && *ev.evidence.mean_depth < cfg.theta_obstacle) {
    ev.kind = FeedbackKind::Vibration;
    return ev;
  }
  // First maximum in class-table order.
  const ClassRatio* top = nullptr;
  for (const auto& r : ev.evidence.stuff_ratios)
    if (!top || r.ratio > top->ratio || (r.ratio == top->ratio && r.id < top->id)) top = &r;
  if (top && top->ratio > cfg.theta_trans) {
    ev.kind = FeedbackKind::SpeechStuff;
    ev.stuff_class = top->id;
    return ev;
  }
  if (max_ratio(ev.evidence.walkable) > cfg.theta_walkable) {
    ev.kind = FeedbackKind::SpeechDirection;
    ev.direction = best_direction(ev.evidence.walkable);
    return ev;
  }
  ev.nearest = nearest_object(seg, cfg);
  if (ev.nearest) {
    ev.kind = FeedbackKind::SpeechNearest;
    if (std::isfinite(ev.nearest->median_depth)) ev.evidence.nearest_depth = ev.nearest->median_depth;
  } else {
    ev.kind = FeedbackKind::SpeechClear;
  }
  return ev;
}

inline nlohmann::json to_json(const FeedbackEvent& ev) {
  nlohmann::json stuff = nlohmann::json::object();
  for (const auto& r : ev.evidence.stuff_ratios) stuff[class_name(true, r.id)] = r.ratio;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"t", ev.timestamp},
          {"kind", to_string(ev.kind)},
          {"payload", ev.payload()},
          {"evidence",
           {{"mean_depth", opt(ev.evidence.mean_depth)},
            {"stuff_ratios", stuff},
            {"walkable_ratios",
             {{"left", ev.evidence.walkable.left},
              {"forward", ev.evidence.walkable.forward},
              {"right", ev.evidence.walkable.right}}},
            {"nearest_depth", opt(ev.evidence.nearest_depth)}}}};
}

// Capacity-one mailbox: writers overwrite, the reader takes the newest value.
template <class T>
class LatestSlot {
 public:
  // Returns true when an unread value was overwritten.
  bool put(T value) {
    std::lock_guard lock(mu_);
    const bool dropped = value_.has_value();
    value_ = std::move(value);
    return dropped;
  }
  std::optional<T> take() {
    std::lock_guard lock(mu_);
    std::optional<T> out = std::move(value_);
    value_.reset();
    return out;
  }

 private:
  std::mutex mu_;
  std::optional<T> value_;
};

}  // namespace t4t
