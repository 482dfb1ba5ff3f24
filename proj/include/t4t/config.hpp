#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4t/error.hpp"

namespace t4t {

enum class Variant { Nano, Tiny, Small, Medium };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Nano: return "nano";
    case Variant::Tiny: return "tiny";
    case Variant::Small: return "small";
    case Variant::Medium: return "medium";
  }
  return "?";
}

inline Variant parse_variant(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "nano") return Variant::Nano;
  if (name == "tiny" || name == "t") return Variant::Tiny;
  if (name == "small" || name == "s") return Variant::Small;
  if (name == "medium" || name == "m") return Variant::Medium;
  throw ConfigError("unknown variant '" + name + "' (expected nano|tiny|small|medium)");
}

// General scene head (Stanford2D3D classes, id 0 doubles as background) and
// transparency head (Trans10K-v2: background + 11 categories).
inline constexpr int kGeneralClasses = 13;
inline constexpr int kTransClasses = 12;

struct HeadSpec {
  std::string name;
  int num_classes = 0;
  bool operator==(const HeadSpec&) const = default;
};

struct ModelConfig {
  Variant variant = Variant::Tiny;
  std::array<int, 4> channels{64, 128, 320, 512};
  std::array<int, 4> depths{2, 2, 2, 2};
  std::array<int, 4> num_heads{1, 2, 5, 8};
  std::array<int, 4> sr_ratios{8, 4, 2, 1};
  std::array<int, 4> mlp_ratios{8, 8, 4, 4};
  int tpm_channels = 64;
  int tpm_mlp_ratio = 8;
  int in_channels = 3;
  // Position embeddings are stored on the token grid of this input size and
  // resampled for any other size.
  int pos_embed_size = 224;
  int input_h = 512;
  int input_w = 512;
  std::vector<HeadSpec> outputs{{"general", kGeneralClasses}, {"trans", kTransClasses}};

  bool operator==(const ModelConfig&) const = default;

  bool dual_head() const { return outputs.size() == 2; }
  int tpm_heads() const { return std::max(1, tpm_channels / 64); }

  static int stride(int stage) { return 4 << stage; }

  static ModelConfig preset(Variant v, bool dual = true, int tpm_channels = 64) {
    ModelConfig c;
    c.variant = v;
    c.tpm_channels = tpm_channels;
    switch (v) {
      case Variant::Tiny: c.depths = {2, 2, 2, 2}; break;
      case Variant::Small: c.depths = {3, 4, 6, 3}; break;
      case Variant::Medium: c.depths = {3, 4, 18, 3}; break;
      case Variant::Nano:
        c.channels = {8, 16, 24, 32};
        c.depths = {1, 1, 1, 1};
        c.num_heads = {1, 2, 3, 4};
        c.sr_ratios = {4, 2, 1, 1};
        c.mlp_ratios = {2, 2, 2, 2};
        c.tpm_channels = tpm_channels == 64 ? 16 : tpm_channels;
        c.tpm_mlp_ratio = 2;
        c.pos_embed_size = 32;
        c.input_h = c.input_w = 32;
        break;
    }
    if (!dual) c.outputs = {{"general", kGeneralClasses}};
    c.validate();
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    for (int i = 0; i < 4; ++i) {
      if (channels[i] <= 0 || depths[i] < 0 || num_heads[i] <= 0 || sr_ratios[i] <= 0 ||
          mlp_ratios[i] <= 0) {
        fail("stage " + std::to_string(i + 1) + " has a non-positive hyperparameter");
      }
      if (i > 0 && channels[i] <= channels[i - 1]) fail("stage channels must strictly increase");
      if (channels[i] % num_heads[i] != 0) {
        fail("stage " + std::to_string(i + 1) + " channels " + std::to_string(channels[i]) +
             " not divisible by " + std::to_string(num_heads[i]) + " heads");
      }
    }
    if (variant != Variant::Nano && tpm_channels != 64 && tpm_channels != 128 &&
        tpm_channels != 256 && tpm_channels != 512) {
      fail("tpm_channels must be one of 64, 128, 256, 512");
    }
    if (tpm_channels <= 0 || tpm_channels % tpm_heads() != 0) fail("invalid tpm_channels");
    if (tpm_mlp_ratio <= 0 || in_channels <= 0) fail("invalid tpm_mlp_ratio / in_channels");
    if (pos_embed_size <= 0 || pos_embed_size % 32 != 0) fail("pos_embed_size must be a multiple of 32");
    if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0) {
      fail("input size must be positive multiples of 32");
    }
    for (int i = 0; i < 4; ++i) {
      const int grid = pos_embed_size / stride(i);
      if (grid % sr_ratios[i] != 0) {
        fail("stage " + std::to_string(i + 1) + " grid not divisible by sr_ratio");
      }
    }
    if (outputs.empty() || outputs.size() > 2) fail("expected one or two output heads");
    for (const auto& h : outputs) {
      if (h.num_classes <= 0) fail("head '" + h.name + "' needs at least one class");
    }
    if (outputs.size() == 2 && outputs[0].name == outputs[1].name) fail("duplicate head names");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : c.outputs) heads.push_back({{"name", h.name}, {"classes", h.num_classes}});
  return {{"variant", to_string(c.variant)},  {"channels", c.channels},
          {"depths", c.depths},               {"num_heads", c.num_heads},
          {"sr_ratios", c.sr_ratios},         {"mlp_ratios", c.mlp_ratios},
          {"tpm_channels", c.tpm_channels},   {"tpm_mlp_ratio", c.tpm_mlp_ratio},
          {"in_channels", c.in_channels},     {"pos_embed_size", c.pos_embed_size},
          {"input_h", c.input_h},             {"input_w", c.input_w},
          {"heads", heads}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.channels = j.at("channels").get<std::array<int, 4>>();
    c.depths = j.at("depths").get<std::array<int, 4>>();
    c.num_heads = j.at("num_heads").get<std::array<int, 4>>();
    c.sr_ratios = j.at("sr_ratios").get<std::array<int, 4>>();
    c.mlp_ratios = j.at("mlp_ratios").get<std::array<int, 4>>();
    c.tpm_channels = j.at("tpm_channels").get<int>();
    c.tpm_mlp_ratio = j.at("tpm_mlp_ratio").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.pos_embed_size = j.at("pos_embed_size").get<int>();
    c.input_h = j.at("input_h").get<int>();
    c.input_w = j.at("input_w").get<int>();
    c.outputs.clear();
    for (const auto& h : j.at("heads")) {
      c.outputs.push_back({h.at("name").get<std::string>(), h.at("classes").get<int>()});
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config json: ") + e.what());
  }
}

}  // namespace t4t
