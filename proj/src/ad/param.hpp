#pragma once

#include <string>
#include <vector>

#include "ad/tensor.hpp"

namespace flame::ad {

/// A named trainable buffer that outlives any single graph.  Complex-valued
/// weights are held as separate real and imaginary Param buffers and joined
/// with make_complex inside the forward pass.  grad accumulates across graph
/// rebuilds until zero_grad.
struct Param {
  std::string name;
  Shape shape;
  AlignedVec<double> value;
  AlignedVec<double> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Shape s, bool train = true)
      : name(std::move(n)), shape(std::move(s)), trainable(train) {
    value.assign(numel(shape), 0.0);
    grad.assign(numel(shape), 0.0);
  }

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using ParamList = std::vector<Param*>;

/// Leaf tensor view of a Param for use inside a graph.  After backward, call
/// accumulate_grad to fold the graph-local gradient into the Param.
inline Tensor leaf(Graph& g, const Param& p) {
  return g.value(p.shape, DType::real, p.value.data(), p.trainable);
}

inline void accumulate_grad(Param& p, const Tensor& t) {
  if (!t->grad.empty())
    for (std::int64_t i = 0; i < p.size(); ++i) p.grad[i] += t->grad[i];
}

}  // namespace flame::ad
