#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "t4t/array.hpp"

namespace t4t {

enum class Init { TruncNormal, Zeros, Ones };

// Named parameters in registration order. Initialization draws from one
// mt19937_64 stream, so a seed fixes every value.
template <Scalar T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Array<T> value;
  };

  static constexpr double kInitStd = 0.02;

  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  const Array<T>& add(std::string name, Shape shape, Init init) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter " + name);
    Array<T> a(std::move(shape));
    switch (init) {
      case Init::Zeros: break;
      case Init::Ones: std::fill(a.data().begin(), a.data().end(), T(1)); break;
      case Init::TruncNormal:
        for (auto& v : a.data()) v = static_cast<T>(truncated_normal() * kInitStd);
        break;
    }
    a.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(a)});
    return entries_.back().value;
  }

  const Array<T>& operator[](std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + std::string(name));
    return entries_[it->second].value;
  }

  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<Array<T>> arrays() const {
    std::vector<Array<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
  }

  void zero_grad() const {
    for (const auto& e : entries_) e.value.zero_grad();
  }

 private:
  // Standard normal truncated to [-2, 2] (Box-Muller on raw 53-bit draws).
  double truncated_normal() {
    for (;;) {
      const double u1 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
      const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      if (z >= -2.0 && z <= 2.0) return z;
    }
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::mt19937_64 rng_;
};

}  // namespace t4t
