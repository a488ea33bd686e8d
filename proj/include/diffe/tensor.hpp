#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "diffe/common.hpp"

namespace diffe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty means "no gradient stored"
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

// Shaped numeric array with an optional gradient slot. Copies are shallow
// handles to the same storage; use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() : node_(std::make_shared<Node>()) {}

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value.assign(shape_numel(node_->shape), fill);
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    }
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (T& x : t.node_->value) x = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T& operator[](std::size_t i) { return node_->value[i]; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    if (!rg) node_->grad.clear();
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const {
    if (node_->grad.empty()) throw UsageError("gradient is absent for this tensor");
    return {node_->grad.data(), node_->grad.size()};
  }
  std::vector<T>& grad_storage() { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  // New storage, same values, cut loose from any recorded graph.
  Tensor detach() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  Tensor clone() const {
    Tensor t = detach();
    t.node_->requires_grad = node_->requires_grad;
    t.node_->grad = node_->grad;
    return t;
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  bool all_finite() const {
    for (const T& v : node_->value) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Records executed primitives in execution order, which is a valid
// topological order of the computation graph. The backward pass replays the
// records once, in reverse.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<detail::TensorNode<T>>;

  void record(NodePtr output, std::function<void()> pull) {
    records_.push_back(Record{std::move(output), std::move(pull)});
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  void clear() { records_.clear(); }

  template <typename U>
  friend void backward(const Tensor<U>& output, Tape<U>& tape);

 private:
  struct Record {
    NodePtr out;
    std::function<void()> pull;
  };
  std::vector<Record> records_;
};

// Populates d(output)/d(leaf) on every requires_grad leaf reachable from the
// tape. Gradients of intermediates are scratch space and reset per call;
// leaf gradients accumulate across calls until cleared explicitly.
template <typename T>
void backward(const Tensor<T>& output, Tape<T>& tape) {
  if (output.size() != 1) {
    throw UsageError("backward expects a scalar output, got shape " + shape_str(output.shape()));
  }
  for (auto& r : tape.records_) {
    r.out->grad.assign(r.out->value.size(), T(0));
  }
  auto out_node = output.node();
  out_node->ensure_grad();
  out_node->grad[0] += T(1);
  for (auto it = tape.records_.rbegin(); it != tape.records_.rend(); ++it) {
    it->pull();
  }
}

}  // namespace diffe
