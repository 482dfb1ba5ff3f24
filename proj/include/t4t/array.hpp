#pragma once

#include <algorithm>
#include <concepts>
#include <cstring>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "t4t/error.hpp"

namespace t4t {

using Shape = std::vector<std::size_t>;

template <typename T>
concept Scalar = std::same_as<T, float> || std::same_as<T, double>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major N-dimensional array. Copies are shallow handles onto the
// same node; the tape keys gradient flow on node identity.
template <Scalar T>
class Array {
 public:
  using value_type = T;

  Array() : node_(std::make_shared<Node>()) { node_->shape = {0}; }

  explicit Array(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Array(Shape shape, std::vector<T> data) : node_(std::make_shared<Node>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("array: shape " + to_string(shape) + " needs " +
                       std::to_string(numel(shape)) + " elements, got " +
                       std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Array scalar(T value) { return Array(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& storage() { return node_->data; }
  const std::vector<T>& storage() const { return node_->data; }

  T item() const {
    if (size() != 1) {
      throw ShapeError("item() on array of shape " + to_string(shape()));
    }
    return node_->data[0];
  }

  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // True for arrays produced by a recorded tape operation.
  bool tracked() const { return node_->tracked; }
  void mark_tracked() {
    node_->tracked = true;
    node_->requires_grad = true;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }

  // Gradient buffer, allocated as zeros on first use. Gradient state lives
  // on the shared node, so const handles may accumulate into it.
  std::span<T> grad_mut() const {
    if (node_->grad.empty()) node_->grad.assign(size(), T(0));
    return node_->grad;
  }

  void zero_grad() const { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
  void drop_grad() const { node_->grad.clear(); }

  // Fresh node with the same values and no gradient state.
  Array detach() const { return Array(shape(), node_->data); }

  bool same_node(const Array& other) const { return node_ == other.node_; }

  template <Scalar U>
  Array<U> cast() const {
    return Array<U>(shape(), std::vector<U>(node_->data.begin(), node_->data.end()));
  }

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool tracked = false;
  };
  std::shared_ptr<Node> node_;
};

// Bitwise equality of shape and values.
template <Scalar T>
bool identical(const Array<T>& a, const Array<T>& b) {
  return a.shape() == b.shape() &&
         std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](T x, T y) {
                      return std::memcmp(&x, &y, sizeof(T)) == 0;
                    });
}

}  // namespace t4t
