#pragma once

#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4t/error.hpp"
#include "t4t/ops.hpp"

namespace t4t {

struct EvalResult {
  std::size_t num_classes = 0;
  // confusion[gt * K + pred]
  std::vector<std::uint64_t> confusion;
  // NaN for classes absent from both GT and prediction.
  std::vector<double> iou;
  double miou = 0.0;
  double accuracy = 0.0;
  std::uint64_t pixels = 0;

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return confusion[gt * num_classes + pred]; }
};

namespace detail {

inline void finalize(EvalResult& r) {
  const std::size_t k = r.num_classes;
  r.iou.assign(k, std::numeric_limits<double>::quiet_NaN());
  std::uint64_t diag = 0, total = 0;
  double iou_sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += r.confusion[c * k + j];
      col += r.confusion[j * k + c];
    }
    const std::uint64_t tp = r.confusion[c * k + c];
    diag += tp;
    total += row;
    const std::uint64_t uni = row + col - tp;
    if (uni > 0) {
      r.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
      iou_sum += r.iou[c];
      ++present;
    }
  }
  r.pixels = total;
  r.miou = present ? iou_sum / static_cast<double>(present) : 0.0;
  r.accuracy = total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
}

}  // namespace detail

// Accumulates a confusion matrix over pairs of masks.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::size_t num_classes, std::int32_t ignore_index = 255)
      : k_(num_classes), ignore_(ignore_index), counts_(num_classes * num_classes, 0) {}

  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt) {
    if (pred.size() != gt.size()) {
      throw ShapeError("evaluate: prediction has " + std::to_string(pred.size()) +
                       " pixels, ground truth has " + std::to_string(gt.size()));
    }
    const auto k = static_cast<std::int32_t>(k_);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore_) continue;
      if (gt[i] < 0 || gt[i] >= k || pred[i] < 0 || pred[i] >= k) {
        throw ValidationError("evaluate: class id " + std::to_string(gt[i] < 0 || gt[i] >= k ? gt[i] : pred[i]) +
                              " at pixel " + std::to_string(i) + " outside [0, " + std::to_string(k_) + ")");
      }
      ++counts_[static_cast<std::size_t>(gt[i]) * k_ + static_cast<std::size_t>(pred[i])];
    }
  }

  EvalResult result() const {
    EvalResult r;
    r.num_classes = k_;
    r.confusion = counts_;
    detail::finalize(r);
    return r;
  }

 private:
  std::size_t k_;
  std::int32_t ignore_;
  std::vector<std::uint64_t> counts_;
};

inline EvalResult evaluate(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                           std::size_t num_classes, std::int32_t ignore_index = 255) {
  ConfusionAccumulator acc(num_classes, ignore_index);
  acc.add(pred, gt);
  return acc.result();
}

// Logits [B, K, H, W] are reduced by argmax first.
template <Scalar T>
EvalResult evaluate(const Array<T>& logits, std::span<const std::int32_t> gt, std::int32_t ignore_index = 255) {
  const auto pred = argmax_channels(logits);
  return evaluate(pred, gt, logits.dim(1), ignore_index);
}

inline nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json iou = nlohmann::json::array();
  for (double v : r.iou) iou.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"num_classes", r.num_classes}, {"pixels", r.pixels}, {"miou", r.miou},
          {"accuracy", r.accuracy},       {"iou", iou},         {"confusion", r.confusion}};
}

}  // namespace t4t
