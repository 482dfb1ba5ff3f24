#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "t4t/config.hpp"
#include "t4t/ops.hpp"
#include "t4t/params.hpp"

namespace t4t {

// Encoder outputs F1..F4 as [B, C_i, H / 4·2^i, W / 4·2^i] maps.
template <Scalar T>
struct PyramidFeatures {
  std::array<Array<T>, 4> maps;
  const Array<T>& operator[](std::size_t i) const { return maps[i]; }
};

template <Scalar T>
struct DualHeadOutput {
  Array<T> general_logits;  // [B, 13, H, W]
  Array<T> trans_logits;    // [B, 12, H, W]
};

// How keys/values are spatially reduced when sr_ratio > 1. Encoder blocks
// use a strided r x r patch projection; decoder (TPM) blocks use
// parameter-free r x r mean pooling. Both are followed by a layer norm.
enum class KvReduction { Projection, Pooling };

struct BlockSpec {
  std::size_t channels = 0;
  std::size_t heads = 1;
  std::size_t sr_ratio = 1;
  std::size_t mlp_ratio = 4;
  KvReduction reduction = KvReduction::Projection;
};

template <Scalar T>
void register_linear(ParamStore<T>& p, const std::string& name, std::size_t in, std::size_t out) {
  p.add(name + ".weight", {in, out}, Init::TruncNormal);
  p.add(name + ".bias", {out}, Init::Zeros);
}

template <Scalar T>
void register_norm(ParamStore<T>& p, const std::string& name, std::size_t width) {
  p.add(name + ".weight", {width}, Init::Ones);
  p.add(name + ".bias", {width}, Init::Zeros);
}

template <Scalar T>
void register_block(ParamStore<T>& p, const std::string& prefix, const BlockSpec& s) {
  const std::size_t c = s.channels;
  register_norm(p, prefix + ".norm1", c);
  register_linear(p, prefix + ".attn.q", c, c);
  register_linear(p, prefix + ".attn.k", c, c);
  register_linear(p, prefix + ".attn.v", c, c);
  if (s.sr_ratio > 1) {
    if (s.reduction == KvReduction::Projection) {
      register_linear(p, prefix + ".attn.sr", c * s.sr_ratio * s.sr_ratio, c);
    }
    register_norm(p, prefix + ".attn.sr_norm", c);
  }
  register_linear(p, prefix + ".attn.proj", c, c);
  register_norm(p, prefix + ".norm2", c);
  register_linear(p, prefix + ".mlp.fc1", c, c * s.mlp_ratio);
  register_linear(p, prefix + ".mlp.fc2", c * s.mlp_ratio, c);
}

namespace detail {

template <Scalar T>
Array<T> apply_linear(const ParamStore<T>& p, const std::string& name, const Array<T>& x) {
  return linear(x, p[name + ".weight"], p[name + ".bias"]);
}

template <Scalar T>
Array<T> apply_norm(const ParamStore<T>& p, const std::string& name, const Array<T>& x) {
  return layer_norm(x, p[name + ".weight"], p[name + ".bias"]);
}

// [B, N, C] -> [B, heads, N, C / heads]
template <Scalar T>
Array<T> split_heads(const Array<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
  return permute(reshape(x, {b, n, heads, c / heads}), {0, 2, 1, 3});
}

template <Scalar T>
Array<T> merge_heads(const Array<T>& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), n = x.dim(2), d = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, n, h * d});
}

}  // namespace detail

// Spatial-reduction attention over [B, N, C] tokens laid out on a grid_h x
// grid_w grid. Queries come from every token; keys and values from the grid
// reduced by sr_ratio. Optionally returns the [B, heads, N, M] weights.
template <Scalar T>
Array<T> sra_attention(const Array<T>& tokens, std::size_t grid_h, std::size_t grid_w,
                       const BlockSpec& spec, const ParamStore<T>& p, const std::string& prefix,
                       Array<T>* weights_out = nullptr) {
  if (tokens.rank() != 3 || tokens.dim(1) != grid_h * grid_w || tokens.dim(2) != spec.channels) {
    throw ShapeError("sra_attention: tokens " + to_string(tokens.shape()) + " vs grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " and " +
                     std::to_string(spec.channels) + " channels");
  }
  if (spec.channels % spec.heads != 0) {
    throw ShapeError("sra_attention: channels not divisible by heads");
  }
  const std::string a = prefix + ".attn";
  auto q = detail::split_heads(detail::apply_linear(p, a + ".q", tokens), spec.heads);

  Array<T> source = tokens;
  if (spec.sr_ratio > 1) {
    auto map = tokens_to_map(tokens, grid_h, grid_w);
    if (spec.reduction == KvReduction::Projection) {
      source = patch_tokens(map, p[a + ".sr.weight"], p[a + ".sr.bias"], spec.sr_ratio,
                            spec.sr_ratio);
    } else {
      source = map_to_tokens(avg_pool2d(map, spec.sr_ratio));
    }
    source = detail::apply_norm(p, a + ".sr_norm", source);
  }
  auto k = detail::split_heads(detail::apply_linear(p, a + ".k", source), spec.heads);
  auto v = detail::split_heads(detail::apply_linear(p, a + ".v", source), spec.heads);

  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(spec.channels / spec.heads));
  auto weights = softmax(scale(matmul_nt(q, k), inv_sqrt_d), -1);
  if (weights_out) *weights_out = weights;
  auto mixed = detail::merge_heads(matmul(weights, v));
  return detail::apply_linear(p, a + ".proj", mixed);
}

// Pre-norm block: x + SRA(LN(x)), then x + MLP(LN(x)) with
// MLP = fc1 (x mlp_ratio) -> GELU -> fc2.
template <Scalar T>
Array<T> transformer_block(const Array<T>& tokens, std::size_t grid_h, std::size_t grid_w,
                           const BlockSpec& spec, const ParamStore<T>& p,
                           const std::string& prefix) {
  auto x = add(tokens, sra_attention(detail::apply_norm(p, prefix + ".norm1", tokens), grid_h,
                                     grid_w, spec, p, prefix));
  auto h = gelu(detail::apply_linear(p, prefix + ".mlp.fc1", detail::apply_norm(p, prefix + ".norm2", x)));
  return add(x, detail::apply_linear(p, prefix + ".mlp.fc2", h));
}

// Shared four-stage pyramid encoder feeding one or two TPM decoders.
template <Scalar T>
class Trans4Trans {
 public:
  explicit Trans4Trans(ModelConfig config, std::uint64_t seed = 0)
      : config_(std::move(config)), params_(seed) {
    config_.validate();
    std::size_t in = static_cast<std::size_t>(config_.in_channels);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string s = stage_prefix(i);
      const std::size_t c = static_cast<std::size_t>(config_.channels[i]);
      const std::size_t k = patch_size(i);
      register_linear(params_, s + ".patch", in * k * k, c);
      register_norm(params_, s + ".patch_norm", c);
      const std::size_t g = pos_grid(i);
      params_.add(s + ".pos_embed", {1, c, g, g}, Init::TruncNormal);
      for (int d = 0; d < config_.depths[i]; ++d) {
        register_block(params_, s + ".block" + std::to_string(d), encoder_spec(i));
      }
      register_norm(params_, s + ".norm", c);
      in = c;
    }
    for (std::size_t h = 0; h < config_.outputs.size(); ++h) {
      const std::string hp = head_prefix(h);
      const std::size_t e = static_cast<std::size_t>(config_.tpm_channels);
      for (std::size_t i = 0; i < 4; ++i) {
        const std::string tp = hp + ".tpm" + std::to_string(i + 1);
        register_linear(params_, tp + ".proj", static_cast<std::size_t>(config_.channels[i]), e);
        register_block(params_, tp + ".block", tpm_spec(i));
      }
      register_linear(params_, hp + ".classifier", e,
                      static_cast<std::size_t>(config_.outputs[h].num_classes));
    }
  }

  const ModelConfig& config() const { return config_; }
  const ParamStore<T>& params() const { return params_; }

  static std::size_t patch_size(std::size_t stage) { return stage == 0 ? 4 : 2; }
  static std::string stage_prefix(std::size_t stage) {
    return "encoder.stage" + std::to_string(stage + 1);
  }
  std::string head_prefix(std::size_t head) const { return "head_" + config_.outputs.at(head).name; }

  std::size_t pos_grid(std::size_t stage) const {
    return static_cast<std::size_t>(config_.pos_embed_size / ModelConfig::stride(static_cast<int>(stage)));
  }

  BlockSpec encoder_spec(std::size_t i) const {
    return {static_cast<std::size_t>(config_.channels[i]), static_cast<std::size_t>(config_.num_heads[i]),
            static_cast<std::size_t>(config_.sr_ratios[i]), static_cast<std::size_t>(config_.mlp_ratios[i]),
            KvReduction::Projection};
  }

  BlockSpec tpm_spec(std::size_t i) const {
    return {static_cast<std::size_t>(config_.tpm_channels), static_cast<std::size_t>(config_.tpm_heads()),
            static_cast<std::size_t>(config_.sr_ratios[i]), static_cast<std::size_t>(config_.tpm_mlp_ratio),
            KvReduction::Pooling};
  }

  void check_input(const Array<T>& image) const {
    if (image.rank() != 4 || image.dim(1) != static_cast<std::size_t>(config_.in_channels)) {
      throw ShapeError("image must be [B, " + std::to_string(config_.in_channels) +
                       ", H, W], got " + to_string(image.shape()));
    }
    if (image.dim(2) == 0 || image.dim(3) == 0 || image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
      throw ShapeError("image extents " + to_string(image.shape()) + " must be multiples of 32");
    }
  }

  PyramidFeatures<T> encode(const Array<T>& image) const {
    check_input(image);
    PyramidFeatures<T> out;
    Array<T> x = image;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string s = stage_prefix(i);
      const std::size_t k = patch_size(i);
      const std::size_t gh = x.dim(2) / k, gw = x.dim(3) / k;
      auto tokens = patch_tokens(x, params_[s + ".patch.weight"], params_[s + ".patch.bias"], k, k);
      tokens = detail::apply_norm(params_, s + ".patch_norm", tokens);
      auto pos = map_to_tokens(bilinear_resize(params_[s + ".pos_embed"], gh, gw));
      if (tokens.dim(0) != 1) pos = broadcast_to(pos, tokens.shape());
      tokens = add(tokens, pos);
      for (int d = 0; d < config_.depths[i]; ++d) {
        tokens = transformer_block(tokens, gh, gw, encoder_spec(i), params_,
                                   s + ".block" + std::to_string(d));
      }
      tokens = detail::apply_norm(params_, s + ".norm", tokens);
      x = tokens_to_map(tokens, gh, gw);
      out.maps[i] = x;
    }
    return out;
  }

  // Projection C_i -> tpm_channels, one transformer block on the feature's
  // own grid, bilinear resize to (out_h, out_w) = (H/4, W/4).
  Array<T> tpm_forward(const Array<T>& feature, std::size_t stage, std::size_t head,
                       std::size_t out_h, std::size_t out_w) const {
    if (feature.rank() != 4 || feature.dim(1) != static_cast<std::size_t>(config_.channels.at(stage))) {
      throw ShapeError("tpm" + std::to_string(stage + 1) + ": feature " +
                       to_string(feature.shape()) + " does not carry " +
                       std::to_string(config_.channels.at(stage)) + " channels");
    }
    const std::string tp = head_prefix(head) + ".tpm" + std::to_string(stage + 1);
    const std::size_t gh = feature.dim(2), gw = feature.dim(3);
    auto tokens = detail::apply_linear(params_, tp + ".proj", map_to_tokens(feature));
    tokens = transformer_block(tokens, gh, gw, tpm_spec(stage), params_, tp + ".block");
    auto map = tokens_to_map(tokens, gh, gw);
    if (gh == out_h && gw == out_w) return map;
    return bilinear_resize(map, out_h, out_w);
  }

  // D4 = TPM4(F4), D_i = TPM_i(F_i) + D_{i+1}; 1x1 classifier; bilinear x4.
  Array<T> decode_head(const PyramidFeatures<T>& pyr, std::size_t head, std::size_t out_h,
                       std::size_t out_w) const {
    const std::size_t qh = out_h / 4, qw = out_w / 4;
    Array<T> fused = tpm_forward(pyr[3], 3, head, qh, qw);
    for (std::size_t i = 3; i-- > 0;) fused = add(tpm_forward(pyr[i], i, head, qh, qw), fused);
    auto logits = detail::apply_linear(params_, head_prefix(head) + ".classifier", map_to_tokens(fused));
    return bilinear_resize(tokens_to_map(logits, qh, qw), out_h, out_w);
  }

  // One logits array per configured head.
  std::vector<Array<T>> forward(const Array<T>& image) const {
    auto pyr = encode(image);
    std::vector<Array<T>> out;
    for (std::size_t h = 0; h < config_.outputs.size(); ++h) {
      out.push_back(decode_head(pyr, h, image.dim(2), image.dim(3)));
    }
    return out;
  }

  DualHeadOutput<T> forward_dual(const Array<T>& image) const {
    if (!config_.dual_head()) throw ConfigError("forward_dual on a single-head model");
    auto out = forward(image);
    return {out[0], out[1]};
  }

 private:
  ModelConfig config_;
  ParamStore<T> params_;
};

// Per-head argmax class-id masks for [B, 3, H, W] input (no tape).
template <Scalar T>
std::vector<std::vector<std::int32_t>> predict_masks(const Trans4Trans<T>& model, const Array<T>& image) {
  NoGradScope<T> no_grad;
  std::vector<std::vector<std::int32_t>> masks;
  for (const auto& logits : model.forward(image)) masks.push_back(argmax_channels(logits));
  return masks;
}

}  // namespace t4t
