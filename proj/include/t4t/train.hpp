#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "t4t/metrics.hpp"
#include "t4t/model.hpp"
#include "t4t/optim.hpp"
#include "t4t/synth.hpp"

namespace t4t {

struct TrainOptions {
  int epochs = 300;
  double base_lr = 1e-4;
  double power = 0.9;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  double weight_decay = 1e-4;
  double divergence_factor = 10.0;
};

struct LossRow {
  int epoch = 0;
  double lr = 0;
  double loss_general = 0;
  double loss_trans = 0;
  double total() const { return loss_general + loss_trans; }
};

struct TrainResult {
  std::vector<LossRow> curve;
  std::uint64_t steps = 0;
};

// Joint training of both heads: per batch the loss is the unweighted sum of
// the two cross-entropies. The learning rate follows poly_lr per epoch.
inline TrainResult train_toy(const Trans4Trans<float>& model, const std::vector<SynthSample>& data,
                             const TrainOptions& opt,
                             const std::function<void(const LossRow&)>& on_epoch = {}) {
  if (!model.config().dual_head()) throw ConfigError("train_toy: dual-head config required");
  if (opt.batch_size == 0) throw ValidationError("train_toy: batch size must be at least 1");
  if (data.empty()) throw ValidationError("train_toy: empty dataset");
  if (opt.epochs < 0) throw ValidationError("train_toy: negative epoch count");

  AdamConfig ac;
  ac.lr = opt.base_lr;
  ac.weight_decay = opt.weight_decay;
  Adam<float> adam(model.params().arrays(), ac);
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  double initial = 0;
  for (int e = 0; e < opt.epochs; ++e) {
    const double lr = poly_lr(e, opt.epochs, opt.base_lr, opt.power);
    adam.set_lr(lr);
    std::shuffle(order.begin(), order.end(), rng);
    LossRow row{e, lr, 0, 0};
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const auto batch = make_batch(data, std::span<const std::size_t>(order).subspan(start, end - start));
      Tape<float> tape;
      TapeScope<float> scope(tape);
      auto out = model.forward_dual(batch.images);
      auto lg = cross_entropy_loss(out.general_logits, batch.general);
      auto lt = cross_entropy_loss(out.trans_logits, batch.trans);
      auto total = add(lg.loss, lt.loss);
      model.params().zero_grad();
      tape.backward(total);
      adam.step();
      ++result.steps;
      const double w = static_cast<double>(end - start) / static_cast<double>(order.size());
      row.loss_general += w * lg.loss.item();
      row.loss_trans += w * lt.loss.item();
    }
    if (e == 0) initial = row.total();
    if (!std::isfinite(row.total()) || row.total() > opt.divergence_factor * initial) {
      throw NumericError("train_toy: diverged at epoch " + std::to_string(e) + " (loss " +
                         std::to_string(row.total()) + ", initial " + std::to_string(initial) + ")");
    }
    result.curve.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

inline void write_loss_csv(std::ostream& os, const std::vector<LossRow>& curve) {
  os << "epoch,lr,loss_general,loss_trans\n";
  const auto old = os.precision(17);
  for (const auto& r : curve) os << r.epoch << ',' << r.lr << ',' << r.loss_general << ',' << r.loss_trans << '\n';
  os.precision(old);
}

struct DualEval {
  EvalResult general;
  EvalResult trans;
};

template <Scalar T>
DualEval evaluate_dataset(const Trans4Trans<T>& model, const std::vector<SynthSample>& data) {
  ConfusionAccumulator g(static_cast<std::size_t>(model.config().outputs.at(0).num_classes));
  ConfusionAccumulator t(static_cast<std::size_t>(model.config().outputs.at(1).num_classes));
  for (const auto& s : data) {
    const Array<T> img = reshape(s.image.template cast<T>(), Shape{1, 3, s.height, s.width});
    const auto masks = predict_masks(model, img);
    g.add(masks[0], s.general_mask);
    t.add(masks[1], s.trans_mask);
  }
  return {g.result(), t.result()};
}

}  // namespace t4t
