#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nav_oracle.hpp"
#include "t4t/session.hpp"

namespace t4t {
namespace {

SegFrame uniform_frame(std::size_t h, std::size_t w, std::int32_t g, std::int32_t t, float d) {
  return {h, w, std::vector<std::int32_t>(h * w, g), std::vector<std::int32_t>(h * w, t),
          std::vector<float>(h * w, d)};
}

TEST(PartitionWalkable, Examples) {
  std::vector<std::int32_t> floor(6 * 9, general::kFloor);
  auto r = partition_walkable(floor, 6, 9);
  EXPECT_EQ(r.left, 1.0);
  EXPECT_EQ(r.forward, 1.0);
  EXPECT_EQ(r.right, 1.0);

  std::vector<std::int32_t> left(6 * 9, general::kWall);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 3; ++x) left[y * 9 + x] = general::kFloor;
  r = partition_walkable(left, 6, 9);
  EXPECT_EQ(r.left, 1.0);
  EXPECT_EQ(r.forward, 0.0);
  EXPECT_EQ(r.right, 0.0);

  std::vector<std::int32_t> six(36, general::kWall);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 2; x < 4; ++x) six[y * 6 + x] = general::kFloor;
  r = partition_walkable(six, 6, 6);
  EXPECT_EQ(r.left, 0.0);
  EXPECT_DOUBLE_EQ(r.forward, 6.0 / 12.0);
  EXPECT_EQ(r.right, 0.0);

  std::vector<std::int32_t> narrow(4, general::kFloor);
  EXPECT_THROW(partition_walkable(narrow, 2, 2), ValidationError);
}

TEST(PartitionWalkable, BandsCoverEveryWalkablePixel) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.4);
  std::vector<std::int32_t> m(12 * 15);
  for (auto& v : m) v = coin(rng) ? general::kFloor : general::kWall;
  const auto r = partition_walkable(m, 12, 15);
  const double total = static_cast<double>(std::count(m.begin(), m.end(), general::kFloor));
  EXPECT_NEAR((r.left + r.forward + r.right) * 12 * 5, total, 1e-9);
  for (double v : {r.left, r.forward, r.right}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(ClassAreaRatios, Examples) {
  std::vector<std::int32_t> m(16, trans::kBackground);
  EXPECT_TRUE(class_area_ratios(m, {}).empty());
  for (int i = 0; i < 4; ++i) m[i * 3] = trans::kWindow;
  const std::int32_t window[] = {trans::kWindow};
  EXPECT_DOUBLE_EQ(class_area_ratios(m, window)[0].ratio, 0.25);
  std::vector<std::int32_t> u(9, trans::kCup);
  const std::int32_t cup[] = {trans::kCup};
  EXPECT_EQ(class_area_ratios(u, cup)[0].ratio, 1.0);
}

TEST(MeanDepth, ValidPixelsOnly) {
  std::vector<float> c(10, 2.0f);
  EXPECT_EQ(mean_depth(c), 2.0);
  std::vector<float> half{1, 1, 0, 0};
  EXPECT_EQ(mean_depth(half), 1.0);
  std::vector<float> none(5, 0.0f);
  EXPECT_FALSE(mean_depth(none).has_value());
}

TEST(NearestObject, MedianDepthAndTieBreaks) {
  NavConfig cfg;
  auto f = uniform_frame(4, 6, general::kWall, trans::kBackground, 5.0f);
  f.general[0] = f.general[1] = general::kChair;
  f.depth[0] = f.depth[1] = 1.5f;
  f.general[10] = general::kDoor;
  f.depth[10] = 3.0f;
  auto n = nearest_object(f, cfg);
  ASSERT_TRUE(n);
  EXPECT_EQ(n->name(), "chair");
  EXPECT_EQ(n->median_depth, 1.5);

  auto empty = uniform_frame(4, 6, general::kClutter, trans::kBackground, 2.0f);
  for (std::size_t i = 0; i < 6; ++i) empty.general[i] = general::kFloor;
  EXPECT_FALSE(nearest_object(empty, cfg));

  auto tie = uniform_frame(4, 6, general::kWall, trans::kBackground, 2.0f);
  tie.general[0] = general::kTable;
  for (int i = 5; i < 8; ++i) tie.trans[i] = trans::kBottle;
  n = nearest_object(tie, cfg);
  ASSERT_TRUE(n);
  EXPECT_TRUE(n->transparency);
  EXPECT_EQ(n->name(), "bottle");

  // Median, not mean: one far outlier does not move the chair.
  auto outlier = uniform_frame(1, 5, general::kChair, trans::kBackground, 1.0f);
  outlier.depth[4] = 40.0f;
  EXPECT_EQ(nearest_object(outlier, cfg)->median_depth, 1.0);
}

TEST(DecideFeedback, AnchoredBranchExamples) {
  NavConfig cfg;
  auto close = uniform_frame(6, 9, general::kFloor, trans::kGlassDoor, 0.5f);
  EXPECT_EQ(decide_feedback(close, cfg).kind, FeedbackKind::Vibration);

  auto glass = uniform_frame(10, 30, general::kFloor, trans::kBackground, 3.0f);
  for (std::size_t i = 0; i < 120; ++i) glass.trans[i] = trans::kGlassDoor;
  auto ev = decide_feedback(glass, cfg);
  EXPECT_EQ(ev.kind, FeedbackKind::SpeechStuff);
  EXPECT_EQ(ev.payload(), "glass door");

  auto corridor = uniform_frame(10, 30, general::kWall, trans::kBackground, 3.0f);
  const std::size_t counts[3] = {10, 80, 20};
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < counts[b]; ++k) corridor.general[(k / 10) * 30 + b * 10 + k % 10] = general::kFloor;
  ev = decide_feedback(corridor, cfg);
  EXPECT_EQ(ev.kind, FeedbackKind::SpeechDirection);
  EXPECT_EQ(ev.payload(), "forward");
}

TEST(DecideFeedback, InvalidDepthIsNotObstacle) {
  NavConfig cfg;
  auto f = uniform_frame(3, 6, general::kWall, trans::kBackground, 0.0f);
  auto ev = decide_feedback(f, cfg);
  EXPECT_EQ(ev.kind, FeedbackKind::SpeechClear);
  EXPECT_FALSE(ev.evidence.mean_depth.has_value());
  EXPECT_EQ(to_json(ev)["payload"], "clear");
}

TEST(DecideFeedback, MatchesOracleOnGrid) {
  NavConfig cfg;
  const auto cases = oracle::grid();
  ASSERT_GE(cases.size(), 81u);
  for (const auto& c : cases) {
    const auto ev = decide_feedback(oracle::make_frame(c), cfg);
    const auto [kind, payload] = oracle::expected(c, cfg);
    EXPECT_EQ(to_string(ev.kind), kind) << c.depth << " " << c.stuff;
    EXPECT_EQ(ev.payload(), payload);
  }
}

TEST(DecideFeedback, ObstacleThresholdMonotoneAndPure) {
  for (const auto& c : oracle::grid()) {
    const auto f = oracle::make_frame(c);
    NavConfig lo, hi;
    lo.theta_obstacle = 0.75;
    hi.theta_obstacle = 1.25;
    const auto a = decide_feedback(f, lo), b = decide_feedback(f, hi);
    if (a.kind == FeedbackKind::Vibration) EXPECT_EQ(b.kind, FeedbackKind::Vibration);
    EXPECT_EQ(to_json(decide_feedback(f, lo)).dump(), to_json(a).dump());
  }
}

TEST(DecideFeedback, RejectsInconsistentFrame) {
  SegFrame f{2, 3, std::vector<std::int32_t>(6, 0), std::vector<std::int32_t>(5, 0), std::vector<float>(6, 1)};
  EXPECT_THROW(decide_feedback(f, NavConfig{}), ValidationError);
  f.trans.push_back(0);
  f.general[0] = 13;
  EXPECT_THROW(decide_feedback(f, NavConfig{}), ValidationError);
}

TEST(NavConfig, JsonOverridesAndValidation) {
  auto c = nav_config_from_json(nlohmann::json{{"theta_trans", 0.4}, {"interval", 0.5}, {"t_stuff", {"window", 8}}});
  EXPECT_EQ(c.theta_trans, 0.4);
  EXPECT_EQ(c.interval, 0.5);
  EXPECT_EQ(c.t_stuff, (std::vector<std::int32_t>{trans::kWindow, trans::kGlassWall}));
  EXPECT_EQ(c.theta_obstacle, 1.0);
  EXPECT_THROW(nav_config_from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
  EXPECT_THROW(nav_config_from_json(nlohmann::json{{"theta_trans", 1.5}}), ConfigError);
  EXPECT_THROW(nav_config_from_json(nlohmann::json{{"t_thing", {"window"}}}), ConfigError);
  EXPECT_THROW(nav_config_from_json(nlohmann::json{{"g_object", {"sofa", "spaceship"}}}), ConfigError);
  EXPECT_EQ(nav_config_from_json(to_json(NavConfig{})).t_thing, NavConfig{}.t_thing);
}

TEST(LatestSlot, OverwritesAndCountsDrops) {
  LatestSlot<int> s;
  EXPECT_FALSE(s.take());
  EXPECT_FALSE(s.put(1));
  EXPECT_TRUE(s.put(2));
  EXPECT_EQ(s.take(), 2);
  EXPECT_FALSE(s.take());
}

std::vector<FrameEntry> synthetic_entries(std::size_t frames, double fps, std::size_t h = 20, std::size_t w = 30) {
  std::vector<FrameEntry> out;
  for (std::size_t i = 0; i < frames; ++i) {
    out.push_back({i, static_cast<double>(i) / fps, [=]() {
                     auto wf = walkway_frame(1, i, frames, h, w);
                     return RgbdFrame{i, static_cast<double>(i) / fps, wf.rgb, wf.depth, wf.general, wf.trans};
                   }});
  }
  return out;
}

TEST(RunSession, TickArithmetic) {
  const auto frames = synthetic_entries(100, 10);
  NavConfig cfg;
  EXPECT_EQ(run_session(frames, 10.0, cfg, precomputed_segmenter).events.size(), 5u);
  cfg.interval = 0.5;
  auto r = run_session(frames, 10.0, cfg, precomputed_segmenter);
  EXPECT_EQ(r.events.size(), 20u);
  EXPECT_EQ(r.dropped, 96u - 20u);  // frames after the last tick are never offered
}

TEST(RunSession, WalkwayMatchesFrozenLog) {
  std::ostringstream log;
  const auto r = run_session(synthetic_entries(100, 10, 40, 60), 10.0, NavConfig{}, precomputed_segmenter, &log);
  std::vector<std::string> got;
  std::istringstream lines(log.str());
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    got.push_back(j["kind"].get<std::string>() + ":" + j["payload"].get<std::string>() + "@" +
                  std::to_string(j["frame"].get<int>()));
  }
  const std::vector<std::string> frozen{"speech_direction:forward@0", "speech_stuff:glass door@20",
                                        "vibration:obstacle@40", "speech_direction:left@60",
                                        "speech_nearest:chair@80"};
  EXPECT_EQ(got, frozen);
  // Every decision agrees with the pure decision function on the same frame.
  for (std::size_t k = 0; k < r.events.size(); ++k) {
    auto wf = walkway_frame(1, k * 20, 100, 40, 60);
    const auto ev = decide_feedback({40, 60, wf.general, wf.trans, wf.depth}, NavConfig{}, 2.0 * k);
    EXPECT_EQ(to_json(ev).dump(), to_json(r.events[k]).dump());
  }
}

TEST(RunSession, ReplayDirectoryAndSkips) {
  const auto dir = (std::filesystem::temp_directory_path() / "t4t_replay_test").string();
  std::filesystem::remove_all(dir);
  write_walkway(dir, 1, 100, 40, 60);
  // Corrupt the frame consumed by the third tick.
  {
    std::ofstream bad(dir + "/0040.pgm", std::ios::binary | std::ios::trunc);
    bad << "P5\n60 40\n65535\n";
  }
  const auto entries = scan_replay_dir(dir, 10);
  ASSERT_EQ(entries.size(), 100u);
  std::ostringstream log;
  const auto r = run_session(entries, 10.0, NavConfig{}, precomputed_segmenter, &log);
  EXPECT_EQ(r.events.size(), 4u);
  EXPECT_EQ(r.skipped, 1u);
  std::istringstream lines(log.str());
  std::vector<nlohmann::json> rows;
  for (std::string line; std::getline(lines, line);) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[2]["kind"], "skip");
  EXPECT_NE(rows[2]["payload"].get<std::string>().find("expected 4800 bytes"), std::string::npos);
  EXPECT_EQ(rows[4]["payload"], "chair");
  for (const auto& key : {"t", "kind", "payload"}) EXPECT_TRUE(rows[0].contains(key));
  EXPECT_TRUE(rows[0]["evidence"].contains("walkable_ratios"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace t4t
