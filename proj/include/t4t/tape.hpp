#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "t4t/array.hpp"

namespace t4t {

// Ordered record of differentiable operations. Records are appended in
// execution order and replayed in exact reverse by backward(). A tape
// belongs to one thread; install it with TapeScope.
template <Scalar T>
class Tape {
 public:
  struct Record {
    std::string op;
    std::function<void()> backward;
  };

  void record(std::string op, std::function<void()> backward) {
    if (consumed_) {
      throw NumericError("tape: recording onto a consumed tape; call reset()");
    }
    records_.push_back({std::move(op), std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  std::vector<std::string> ops() const {
    std::vector<std::string> names;
    names.reserve(records_.size());
    for (const auto& r : records_) names.push_back(r.op);
    return names;
  }

  // Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse.
  // Leaf gradients accumulate; zero them between steps.
  void backward(Array<T> loss) {
    if (consumed_) {
      throw NumericError("backward: tape already consumed; reset() before a second call");
    }
    if (loss.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       to_string(loss.shape()));
    }
    if (!loss.tracked()) {
      throw NumericError("backward: loss is detached from the tape");
    }
    loss.grad_mut()[0] = T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      it->backward();
    }
    consumed_ = true;
  }

  // Drops all records (and the intermediates they keep alive).
  void reset() {
    records_.clear();
    consumed_ = false;
  }

 private:
  std::vector<Record> records_;
  bool consumed_ = false;
};

template <Scalar T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

template <Scalar T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(active_tape<T>()) {
    active_tape<T>() = &tape;
  }
  ~TapeScope() { active_tape<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Disables recording for the current thread (inference).
template <Scalar T>
class NoGradScope {
 public:
  NoGradScope() : previous_(active_tape<T>()) { active_tape<T>() = nullptr; }
  ~NoGradScope() { active_tape<T>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <Scalar T>
void backward(const Array<T>& loss) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) throw NumericError("backward: no active tape");
  tape->backward(loss);
}

namespace detail {

template <Scalar T>
bool needs_record(std::initializer_list<const Array<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  for (const auto* a : inputs) {
    if (a->requires_grad()) return true;
  }
  return false;
}

template <Scalar T>
void record(Array<T>& out, std::string op, std::function<void()> fn) {
  out.mark_tracked();
  active_tape<T>()->record(std::move(op), std::move(fn));
}

}  // namespace detail
}  // namespace t4t
