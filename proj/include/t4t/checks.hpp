#pragma once

#include <random>
#include <vector>

#include "t4t/grad_check.hpp"
#include "t4t/model.hpp"

namespace t4t {

// Whole-model 64-bit gradient check: loss is the sum of both heads'
// cross-entropies against seeded random targets; every parameter and every
// input pixel is perturbed.
inline GradCheckReport model_gradient_check(const ModelConfig& cfg, std::uint64_t seed, std::size_t size = 32,
                                            double eps = 1e-5) {
  Trans4Trans<double> model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> pix(0.0, 1.0);
  Array<double> image(Shape{1, 3, size, size});
  for (auto& v : image.data()) v = pix(rng);
  std::vector<std::vector<std::int32_t>> targets;
  for (const auto& head : cfg.outputs) {
    std::uniform_int_distribution<std::int32_t> cls(0, head.num_classes - 1);
    std::vector<std::int32_t> t(size * size);
    for (auto& v : t) v = cls(rng);
    targets.push_back(std::move(t));
  }
  std::vector<Array<double>> inputs{image};
  for (const auto& e : model.params()) inputs.push_back(e.value);
  auto loss = [&]() {
    const auto logits = model.forward(image);
    Array<double> total = cross_entropy_loss(logits[0], targets[0]).loss;
    for (std::size_t h = 1; h < logits.size(); ++h) total = add(total, cross_entropy_loss(logits[h], targets[h]).loss);
    return total;
  };
  return grad_check<double>(loss, inputs, eps);
}

}  // namespace t4t
