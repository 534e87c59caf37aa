#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node.  Operations on tensors that
// require gradients record their inputs and a backward closure; `backward`
// walks the recorded graph in reverse topological order.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dnet/errors.hpp"

namespace dnet {

using Shape = std::vector<std::size_t>;
using IndexList = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Accumulator type for reductions; one step wider than the storage type so
/// that sums are, in practice, independent of summation order.
template <class T>
struct Accum {
  using type = double;
};
template <>
struct Accum<double> {
  using type = long double;
};
template <class T>
using accum_t = typename Accum<T>::type;

namespace detail {

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

/// Records the discrete choices (ReLU masks, argmax positions, neighbor
/// lists, selections) taken while building a graph.  Two evaluations with
/// equal fingerprints lie on the same smooth piece of the function.
struct DecisionLog {
  std::uint64_t hash = 1469598103934665603ull;
  void mix(std::uint64_t v) {
    hash ^= v + 0x9e3779b97f4a7c15ull + (hash << 6) + (hash >> 2);
  }
};

inline DecisionLog*& decision_log() {
  thread_local DecisionLog* log = nullptr;
  return log;
}

template <class Range>
void record_decisions(const Range& values) {
  if (auto* log = decision_log()) {
    for (auto v : values) log->mix(static_cast<std::uint64_t>(v));
  }
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Receives this node's gradient and accumulates into the inputs.
  std::function<void(const std::vector<T>&)> backward;

  bool is_leaf() const { return inputs.empty(); }

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Scoped switch that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Scoped recorder for the discrete decisions of the forward pass on this
/// thread.  Used by gradient checks to detect non-smooth perturbations.
class DecisionRecorder {
 public:
  DecisionRecorder() : previous_(detail::decision_log()) { detail::decision_log() = &log_; }
  ~DecisionRecorder() { detail::decision_log() = previous_; }
  DecisionRecorder(const DecisionRecorder&) = delete;
  DecisionRecorder& operator=(const DecisionRecorder&) = delete;

  std::uint64_t fingerprint() const { return log_.hash; }

 private:
  detail::DecisionLog log_;
  detail::DecisionLog* previous_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : Tensor(Shape{1}, std::vector<T>{T(0)}) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    for (auto extent : shape)
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    if (dnet::numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + to_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = dnet::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = dnet::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Mutable access to the values; intended for parameters (leaf tensors).
  std::span<T> mutable_data() const { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T item() const {
    if (numel() != 1) throw DimensionError("item() needs a single-element tensor, got " + to_string(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t i, std::size_t j) const { return node_->value[i * node_->shape.back() + j]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() const { return node_->grad_buffer(); }
  void zero_grad() const { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
  void clear_grad() const {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  /// A new leaf holding a copy of the values, disconnected from the graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  /// Builds the result of an operation.  When recording is active and any
  /// input requires gradients, `backward` is attached to the new node.
  static Tensor from_op(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                        std::function<void(const std::vector<T>&)> backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

  /// Gradient buffer of an input inside a backward closure, or nullptr when
  /// that input does not take part in differentiation.
  std::vector<T>* grad_sink() const {
    return node_->requires_grad ? &node_->grad_buffer() : nullptr;
  }

  const NodePtr& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  NodePtr node_;
};

/// Reverse-mode sweep from a scalar loss.  Every reachable leaf with
/// requires_grad ends with a populated gradient (zeros when unaffected).
/// Gradients of leaves accumulate across calls; intermediate gradients are
/// released once propagated.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw DimensionError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  using Node = detail::Node<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  loss.node()->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) {
      n->grad_buffer();
      continue;
    }
    if (n->backward) n->backward(n->grad);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace dnet
