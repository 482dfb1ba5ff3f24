#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "t4t/array.hpp"
#include "t4t/tape.hpp"

namespace t4t {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

// Compares tape gradients of a scalar function against central differences
// with step eps. Error per coordinate is
//   |g_analytic - g_numeric| / max(1, |g_numeric|)
// and the maximum over every coordinate of every input is reported.
// `f` closes over `inputs` (which it may read but not reassign).
template <Scalar T>
GradCheckReport grad_check(const std::function<Array<T>()>& f, std::vector<Array<T>> inputs,
                           double eps = 1e-5) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.drop_grad();
  }
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Array<T> loss = f();
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      throw NumericError("grad_check: non-finite function value");
    }
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  analytic.reserve(inputs.size());
  for (auto& x : inputs) {
    if (x.has_grad()) {
      analytic.emplace_back(x.grad().begin(), x.grad().end());
    } else {
      analytic.emplace_back(x.size(), T(0));
    }
  }

  NoGradScope<T> no_grad;
  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T saved = data[j];
      data[j] = static_cast<T>(saved + eps);
      const double up = f().item();
      data[j] = static_cast<T>(saved - eps);
      const double down = f().item();
      data[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite value while perturbing input " +
                           std::to_string(i) + "[" + std::to_string(j) + "]");
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(static_cast<double>(analytic[i][j]) - numeric) /
                         std::max(1.0, std::abs(numeric));
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_index = j;
      }
      ++report.coordinates;
    }
  }
  return report;
}

template <Scalar T>
double grad_check(const std::function<Array<T>(const Array<T>&)>& f, Array<T> x,
                  double eps = 1e-5) {
  return grad_check<T>([&]() { return f(x); }, std::vector<Array<T>>{x}, eps).max_rel_error;
}

}  // namespace t4t
