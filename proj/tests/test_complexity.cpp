#include <gtest/gtest.h>

#include <sstream>

#include "t4t/complexity.hpp"

namespace t4t {
namespace {

TEST(Complexity, SingleLinearLayer) {
  ComplexityReport r;
  detail::CostBuilder b(r);
  b.linear("fc", 1, 64, 128);
  EXPECT_EQ(r.total_params, 8320u);
  ComplexityReport m;
  detail::CostBuilder mb(m);
  mb.linear("mm", 10, 7, 3);
  EXPECT_EQ(m.total_macs, 10u * 7u * 3u);
  EXPECT_EQ(m.total_flops - 10u * 3u, 2u * 10u * 7u * 3u);
}

TEST(Complexity, TotalsEqualSumOfRows) {
  auto r = count_flops(ModelConfig::preset(Variant::Tiny), 512, 512);
  std::uint64_t p = 0, f = 0, m = 0;
  for (const auto& row : r.rows) {
    p += row.params;
    f += row.flops;
    m += row.macs;
  }
  EXPECT_EQ(p, r.total_params);
  EXPECT_EQ(f, r.total_flops);
  EXPECT_EQ(m, r.total_macs);
}

TEST(Complexity, TableOneParameterCounts) {
  struct Row {
    Variant v;
    double single, dual;
  };
  for (auto row : {Row{Variant::Tiny, 12.71, 13.10}, Row{Variant::Small, 23.95, 24.34},
                   Row{Variant::Medium, 43.65, 44.04}}) {
    EXPECT_NEAR(count_params(ModelConfig::preset(row.v, false)).mparams(), row.single, 0.1 * row.single);
    EXPECT_NEAR(count_params(ModelConfig::preset(row.v, true)).mparams(), row.dual, 0.1 * row.dual);
  }
}

TEST(Complexity, ParamsIndependentOfInputSize) {
  const auto cfg = ModelConfig::preset(Variant::Tiny);
  EXPECT_EQ(count_flops(cfg, 224, 224).total_params, count_flops(cfg, 512, 1024).total_params);
}

TEST(Complexity, DualEqualsSinglePlusOneHead) {
  for (auto v : {Variant::Nano, Variant::Tiny, Variant::Medium}) {
    auto single = count_params(ModelConfig::preset(v, false));
    auto dual = count_params(ModelConfig::preset(v, true));
    EXPECT_EQ(dual.total_params, single.total_params + dual.subtotal("head_trans").params);
    EXPECT_EQ(single.subtotal("encoder").params, dual.subtotal("encoder").params);
  }
}

TEST(Complexity, TpmChannelSweepIsStrictlyIncreasing) {
  std::uint64_t last_p = 0, last_f = 0;
  for (int e : {64, 128, 256, 512}) {
    auto r = count_flops(ModelConfig::preset(Variant::Tiny, false, e), 512, 512);
    EXPECT_GT(r.total_params, last_p);
    EXPECT_GT(r.total_flops, last_f);
    last_p = r.total_params;
    last_f = r.total_flops;
  }
}

TEST(Complexity, PatchEmbeddingScalesWithTokens) {
  const auto cfg = ModelConfig::preset(Variant::Tiny);
  auto big = count_flops(cfg, 512, 512);
  auto small = count_flops(cfg, 256, 256);
  for (int i = 1; i <= 4; ++i) {
    const std::string name = "encoder.stage" + std::to_string(i) + ".patch";
    EXPECT_EQ(big.find(name)->flops, 4 * small.find(name)->flops) << name;
  }
}

TEST(Complexity, AttentionUsesReducedKeyCount) {
  auto r = count_flops(ModelConfig::preset(Variant::Tiny), 512, 512);
  // stage 1: 128x128 queries, sr 8 -> 16x16 keys, 64 channels
  const std::uint64_t n = 128 * 128, m = 16 * 16;
  EXPECT_EQ(r.find("encoder.stage1.block0.attn.core")->macs, 2 * n * m * 64);
}

TEST(Complexity, RejectsIndivisibleInput) {
  EXPECT_THROW(count_flops(ModelConfig::preset(Variant::Tiny), 500, 512), ConfigError);
}

TEST(Complexity, ReportFormats) {
  auto r = count_params(ModelConfig::preset(Variant::Nano));
  std::ostringstream text, jsonl;
  print_report_text(text, r, true);
  print_report_jsonl(jsonl, r);
  EXPECT_NE(text.str().find("total params"), std::string::npos);
  std::istringstream lines(jsonl.str());
  std::string line, last;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("layer"));
    last = line;
    ++count;
  }
  EXPECT_EQ(count, r.rows.size() + 1);
  EXPECT_EQ(nlohmann::json::parse(last)["params"].get<std::uint64_t>(), r.total_params);
}

}  // namespace
}  // namespace t4t
