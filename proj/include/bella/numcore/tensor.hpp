// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and the reverse-mode tape that records operators
// executed on them.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bella {

/// Raised by every operator whose operand shapes do not satisfy its contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace numcore {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until materialized by backward
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves
};

/// Shared handle onto a tensor node. Copies alias the same storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> data(shape_numel(shape), T(0));
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> data(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    for (auto d : shape)
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    if (data.size() != shape_numel(shape))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  /// Mutable access. Only optimizers, initializers and the gradient checker
  /// write through this.
  std::span<T> mutable_values() { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  /// Materializes the gradient. Const because handles share their node.
  std::span<T> grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  std::uint64_t tape_id() const { return node_->tape_id; }
  void set_tape_id(std::uint64_t id) { node_->tape_id = id; }

  /// Deep copy with fresh storage and no gradient.
  Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

  /// Same data in a new shape (copy).
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
    return Tensor(std::move(shape), node_->value, false);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> data(size());
    std::transform(node_->value.begin(), node_->value.end(), data.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape(), std::move(data), requires_grad());
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

/// Ordered record of executed operators. Backward replays the record in
/// reverse, which is a valid topological order because every entry's inputs
/// were produced before it.
template <typename T>
class Tape {
 public:
  struct Entry {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  explicit Tape(bool recording = true) : recording_(recording), id_(next_tape_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::uint64_t id() const { return id_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Whether an operator over these inputs must be recorded.
  bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!recording_) return false;
    for (const auto* t : inputs)
      if (t && t->defined() && t->requires_grad()) return true;
    return false;
  }

  /// Stamps `out` as produced by this tape and, when `track`, appends an entry.
  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T>& out, bool track,
              std::function<void()> backward) {
    out.set_tape_id(id_);
    out.set_requires_grad(track);
    if (!track) return;
    entries_.push_back(Entry{std::move(op), std::move(inputs), out, std::move(backward)});
  }

  void backward(Tensor<T> loss) {
    if (loss.size() != 1 || loss.rank() > 1)
      throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (loss.tape_id() != id_) throw std::invalid_argument("loss was not produced on this tape");
    if (!loss.requires_grad()) return;
    loss.grad_buffer()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->backward();
    }
    entries_.clear();
  }

 private:
  bool recording_;
  std::uint64_t id_;
  std::vector<Entry> entries_;
};

}  // namespace numcore
}  // namespace bella
