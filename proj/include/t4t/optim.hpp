#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "t4t/array.hpp"
#include "t4t/error.hpp"

namespace t4t {

inline double poly_lr(double epoch, double total_epochs = 100, double base = 1e-4, double power = 0.9) {
  if (total_epochs <= 0) throw ValidationError("poly_lr: total_epochs must be positive");
  if (epoch < 0 || epoch > total_epochs) {
    throw ValidationError("poly_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total_epochs) + "]");
  }
  return base * std::pow(1.0 - epoch / total_epochs, power);
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Classic Adam; weight decay enters as an L2 term added to the gradient.
template <Scalar T>
class Adam {
 public:
  Adam(std::vector<Array<T>> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return step_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

  // Parameters without a gradient are treated as having gradient zero.
  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      for (T g : params_[i].grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw NumericError("adam: non-finite gradient in parameter " + std::to_string(i) +
                             " at step " + std::to_string(step_ + 1));
        }
      }
    }
    ++step_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Array<T> p = params_[i];
      auto w = p.data();
      const bool has = p.has_grad();
      std::span<const T> g = has ? p.grad() : std::span<const T>{};
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = (has ? static_cast<double>(g[j]) : 0.0) + cfg_.weight_decay * static_cast<double>(w[j]);
        m[j] = b1 * m[j] + (1.0 - b1) * gj;
        v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
        const double mhat = c1 > 0 ? m[j] / c1 : m[j];
        const double vhat = c2 > 0 ? v[j] / c2 : v[j];
        w[j] = static_cast<T>(static_cast<double>(w[j]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  std::vector<Array<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace t4t
