#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "core/aligned.hpp"
#include "core/errors.hpp"

namespace flame::ad {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Complex tensors store interleaved (re, im) doubles; gradients use the
/// real-pairing convention, so a complex gradient buffer holds the partial
/// derivatives with respect to the real and imaginary parts componentwise.
enum class DType { real, cplx };

struct Node {
  Shape shape;
  DType dtype = DType::real;
  bool requires_grad = false;
  AlignedVec<double> values;
  AlignedVec<double> grad;  // empty until touched by backward
  std::function<void()> backward;

  std::int64_t buffer_len() const {
    return numel(shape) * (dtype == DType::cplx ? 2 : 1);
  }
  AlignedVec<double>& ensure_grad() {
    if (grad.empty()) grad.assign(buffer_len(), 0.0);
    return grad;
  }
};

/// Shared handle to a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[i]; }
  DType dtype() const { return node_->dtype; }
  std::int64_t size() const { return numel(node_->shape); }
  bool requires_grad() const { return node_->requires_grad; }

  const AlignedVec<double>& values() const { return node_->values; }
  AlignedVec<double>& values() { return node_->values; }
  const AlignedVec<double>& grad() const {
    if (node_->grad.empty()) throw NumericalError("tensor: gradient was never reached");
    return node_->grad;
  }

  Node* operator->() const { return node_.get(); }
  Node& ref() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Define-by-run tape. A graph instance is confined to one thread; the tape
/// order is the topological order used (reversed) by backward().
class Graph {
 public:
  /// Leaf holding a copy of `src` (length = numel * dtype width).
  Tensor value(Shape shape, DType dtype, const double* src, bool requires_grad) {
    Tensor t = make(std::move(shape), dtype, requires_grad);
    std::copy(src, src + t->buffer_len(), t->values.begin());
    return t;
  }

  Tensor constant(Shape shape, DType dtype, const double* src) {
    return value(std::move(shape), dtype, src, false);
  }

  Tensor zeros(Shape shape, DType dtype, bool requires_grad) {
    return make(std::move(shape), dtype, requires_grad);
  }

  /// Allocates and records an op output node; used by op implementations.
  Tensor make(Shape shape, DType dtype, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->dtype = dtype;
    n->requires_grad = requires_grad;
    n->values.assign(n->buffer_len(), 0.0);
    tape_.push_back(n);
    return Tensor(n);
  }

  /// Reverse sweep from `root`. Without a seed the root must be a scalar and
  /// receives cotangent 1; otherwise `seed` supplies the root cotangent with
  /// the root's buffer layout.
  void backward(const Tensor& root, const double* seed = nullptr) {
    if (!root.defined() || !root->requires_grad)
      throw ConfigError("graph: backward root does not require gradients");
    if (!seed && numel(root.shape()) != 1)
      throw ConfigError("graph: unseeded backward root must be scalar");
    auto& g = root->ensure_grad();
    if (seed)
      for (std::int64_t i = 0; i < root->buffer_len(); ++i) g[i] += seed[i];
    else
      g[0] += 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node& n = **it;
      if (n.backward && !n.grad.empty()) n.backward();
    }
  }

  std::size_t size() const { return tape_.size(); }

 private:
  std::vector<std::shared_ptr<Node>> tape_;
};

}  // namespace flame::ad
