#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4t/config.hpp"

// Analytic parameter / FLOP accounting from shapes alone.
//
// Convention: one multiply-accumulate = 2 FLOPs. Elementwise work is charged
// per element: add 1, layer norm 5, GELU 8, softmax 5, attention scaling 1,
// bilinear resize 9 per output element, r x r mean pooling r^2 per output
// element. `macs` counts multiply-accumulates only (linear layers, patch
// projections, attention contractions), which is the quantity most
// published "GFLOPs" columns report.

namespace t4t {

struct LayerCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t macs = 0;
};

struct ComplexityReport {
  std::vector<LayerCost> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;
  std::uint64_t total_macs = 0;
  int input_h = 0;
  int input_w = 0;

  double mparams() const { return static_cast<double>(total_params) / 1e6; }
  double gflops() const { return static_cast<double>(total_flops) / 1e9; }
  double gmacs() const { return static_cast<double>(total_macs) / 1e9; }

  const LayerCost* find(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return &r;
    return nullptr;
  }

  // Sum over rows whose name starts with prefix.
  LayerCost subtotal(const std::string& prefix) const {
    LayerCost t{prefix};
    for (const auto& r : rows) {
      if (r.name.compare(0, prefix.size(), prefix) == 0) {
        t.params += r.params;
        t.flops += r.flops;
        t.macs += r.macs;
      }
    }
    return t;
  }
};

namespace detail {

class CostBuilder {
 public:
  explicit CostBuilder(ComplexityReport& r) : report_(r) {}

  void linear(const std::string& name, std::uint64_t rows, std::uint64_t in, std::uint64_t out) {
    emit(name, in * out + out, 2 * rows * in * out + rows * out, rows * in * out);
  }
  void norm(const std::string& name, std::uint64_t rows, std::uint64_t width) {
    emit(name, 2 * width, 5 * rows * width, 0);
  }
  void elementwise(const std::string& name, std::uint64_t n, std::uint64_t per) {
    emit(name, 0, per * n, 0);
  }
  void params_only(const std::string& name, std::uint64_t n) { emit(name, n, 0, 0); }

  void attention_core(const std::string& name, std::uint64_t n, std::uint64_t m, std::uint64_t c,
                      std::uint64_t heads) {
    // QK^T and AV contractions, scaling, softmax
    const std::uint64_t mac = 2 * n * m * c;
    emit(name, 0, 2 * mac + 6 * n * m * heads, mac);
  }

  // One pre-norm transformer block on a grid of `tokens` tokens.
  void block(const std::string& p, std::uint64_t batch, std::uint64_t gh, std::uint64_t gw,
             std::uint64_t c, std::uint64_t heads, std::uint64_t sr, std::uint64_t mlp,
             bool pooled_kv) {
    const std::uint64_t n = batch * gh * gw;
    const std::uint64_t m = batch * (gh / sr) * (gw / sr);
    norm(p + ".norm1", n, c);
    linear(p + ".attn.q", n, c, c);
    if (sr > 1) {
      if (pooled_kv) {
        elementwise(p + ".attn.pool", m * c, sr * sr);
      } else {
        linear(p + ".attn.sr", m, c * sr * sr, c);
      }
      norm(p + ".attn.sr_norm", m, c);
    }
    linear(p + ".attn.k", m, c, c);
    linear(p + ".attn.v", m, c, c);
    attention_core(p + ".attn.core", n, m / batch, c, heads);
    linear(p + ".attn.proj", n, c, c);
    elementwise(p + ".residual1", n * c, 1);
    norm(p + ".norm2", n, c);
    linear(p + ".mlp.fc1", n, c, c * mlp);
    elementwise(p + ".mlp.gelu", n * c * mlp, 8);
    linear(p + ".mlp.fc2", n, c * mlp, c);
    elementwise(p + ".residual2", n * c, 1);
  }

 private:
  void emit(const std::string& name, std::uint64_t params, std::uint64_t flops, std::uint64_t macs) {
    report_.rows.push_back({name, params, flops, macs});
    report_.total_params += params;
    report_.total_flops += flops;
    report_.total_macs += macs;
  }
  ComplexityReport& report_;
};

}  // namespace detail

// Full per-layer accounting for one forward pass at input_h x input_w
// (batch 1). Row names mirror the model's parameter prefixes.
inline ComplexityReport analyze_complexity(const ModelConfig& cfg, int input_h, int input_w) {
  cfg.validate();
  if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw ConfigError("complexity: input size must be positive multiples of 32");
  }
  ComplexityReport r;
  r.input_h = input_h;
  r.input_w = input_w;
  detail::CostBuilder b(r);
  const std::uint64_t batch = 1;
  std::uint64_t in = static_cast<std::uint64_t>(cfg.in_channels);
  std::uint64_t h = static_cast<std::uint64_t>(input_h), w = static_cast<std::uint64_t>(input_w);
  std::vector<std::uint64_t> gh(4), gw(4);
  for (int i = 0; i < 4; ++i) {
    const std::string s = "encoder.stage" + std::to_string(i + 1);
    const std::uint64_t k = i == 0 ? 4 : 2;
    const std::uint64_t c = static_cast<std::uint64_t>(cfg.channels[i]);
    h /= k;
    w /= k;
    gh[i] = h;
    gw[i] = w;
    const std::uint64_t n = batch * h * w;
    b.linear(s + ".patch", n, in * k * k, c);
    b.norm(s + ".patch_norm", n, c);
    const std::uint64_t g = static_cast<std::uint64_t>(cfg.pos_embed_size / ModelConfig::stride(i));
    b.params_only(s + ".pos_embed", c * g * g);
    b.elementwise(s + ".pos_add", n * c, 1 + (g == h && g == w ? 0 : 9));
    for (int d = 0; d < cfg.depths[i]; ++d) {
      b.block(s + ".block" + std::to_string(d), batch, h, w, c,
              static_cast<std::uint64_t>(cfg.num_heads[i]), static_cast<std::uint64_t>(cfg.sr_ratios[i]),
              static_cast<std::uint64_t>(cfg.mlp_ratios[i]), false);
    }
    b.norm(s + ".norm", n, c);
    in = c;
  }
  const std::uint64_t e = static_cast<std::uint64_t>(cfg.tpm_channels);
  const std::uint64_t qh = static_cast<std::uint64_t>(input_h) / 4, qw = static_cast<std::uint64_t>(input_w) / 4;
  for (const auto& head : cfg.outputs) {
    const std::string hp = "head_" + head.name;
    for (int i = 0; i < 4; ++i) {
      const std::string tp = hp + ".tpm" + std::to_string(i + 1);
      const std::uint64_t n = batch * gh[i] * gw[i];
      b.linear(tp + ".proj", n, static_cast<std::uint64_t>(cfg.channels[i]), e);
      b.block(tp + ".block", batch, gh[i], gw[i], e, static_cast<std::uint64_t>(cfg.tpm_heads()),
              static_cast<std::uint64_t>(cfg.sr_ratios[i]), static_cast<std::uint64_t>(cfg.tpm_mlp_ratio),
              true);
      if (gh[i] != qh || gw[i] != qw) b.elementwise(tp + ".resize", batch * qh * qw * e, 9);
      if (i < 3) b.elementwise(tp + ".fuse", batch * qh * qw * e, 1);
    }
    const std::uint64_t k = static_cast<std::uint64_t>(head.num_classes);
    b.linear(hp + ".classifier", batch * qh * qw, e, k);
    b.elementwise(hp + ".upsample", batch * static_cast<std::uint64_t>(input_h) *
                                        static_cast<std::uint64_t>(input_w) * k, 9);
  }
  return r;
}

inline ComplexityReport count_params(const ModelConfig& cfg) {
  return analyze_complexity(cfg, cfg.input_h, cfg.input_w);
}

inline ComplexityReport count_flops(const ModelConfig& cfg, int input_h, int input_w) {
  return analyze_complexity(cfg, input_h, input_w);
}

inline void print_report_text(std::ostream& os, const ComplexityReport& r, bool per_layer) {
  if (per_layer) {
    os << std::left << std::setw(44) << "layer" << std::right << std::setw(12) << "params"
       << std::setw(16) << "flops" << std::setw(16) << "macs" << '\n';
    for (const auto& row : r.rows) {
      os << std::left << std::setw(44) << row.name << std::right << std::setw(12) << row.params
         << std::setw(16) << row.flops << std::setw(16) << row.macs << '\n';
    }
  }
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "total params " << r.total_params << " (" << r.mparams() << " M)\n";
  s << "total flops  " << r.total_flops << " (" << r.gflops() << " GFLOPs, MAC=2) at " << r.input_h
    << "x" << r.input_w << '\n';
  s << "total macs   " << r.total_macs << " (" << r.gmacs() << " GMACs)\n";
  os << s.str();
}

// One JSON object per line: every layer row, then a totals row.
inline void print_report_jsonl(std::ostream& os, const ComplexityReport& r) {
  for (const auto& row : r.rows) {
    os << nlohmann::json{{"layer", row.name}, {"params", row.params}, {"flops", row.flops}, {"macs", row.macs}}.dump()
       << '\n';
  }
  os << nlohmann::json{{"layer", "total"},           {"params", r.total_params},
                       {"flops", r.total_flops},     {"macs", r.total_macs},
                       {"mparams", r.mparams()},     {"gflops", r.gflops()},
                       {"gmacs", r.gmacs()},         {"input_h", r.input_h},
                       {"input_w", r.input_w}}
            .dump()
     << '\n';
}

}  // namespace t4t
