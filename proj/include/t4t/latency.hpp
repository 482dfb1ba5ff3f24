#pragma once

#include <chrono>
#include <cmath>
#include <vector>

#include "t4t/model.hpp"

namespace t4t {

struct LatencyStats {
  double mean_ms = 0;
  double std_ms = 0;
  int runs = 0;
  int warmup = 0;
  std::size_t batch = 1;
  std::size_t size = 512;
  std::vector<double> samples_ms;
};

inline constexpr int kLatencyWarmup = 5;

// Wall-clock time of full dual/single-head inference per frame. `warmup`
// untimed passes run first; std is the population std over timed runs.
template <Scalar T>
LatencyStats measure_latency(const Trans4Trans<T>& model, int runs = 300, std::size_t batch = 1,
                             std::size_t size = 512, int warmup = kLatencyWarmup) {
  if (runs <= 0) throw ValidationError("latency: runs must be positive");
  NoGradScope<T> no_grad;
  Array<T> image(Shape{batch, 3, size, size}, T(0.5));
  auto d = image.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>((i * 2654435761u % 1000) / 1000.0);
  LatencyStats s;
  s.runs = runs;
  s.warmup = warmup;
  s.batch = batch;
  s.size = size;
  for (int i = 0; i < warmup; ++i) (void)model.forward(image);
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = model.forward(image);
    const auto t1 = std::chrono::steady_clock::now();
    s.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() /
                           static_cast<double>(batch));
  }
  double sum = 0;
  for (double v : s.samples_ms) sum += v;
  s.mean_ms = sum / runs;
  double var = 0;
  for (double v : s.samples_ms) var += (v - s.mean_ms) * (v - s.mean_ms);
  s.std_ms = std::sqrt(var / runs);
  return s;
}

}  // namespace t4t
