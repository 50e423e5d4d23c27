#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ad/ops.hpp"
#include "ad/param.hpp"

namespace flame::models {

using ad::DType;
using ad::Graph;
using ad::Param;
using ad::ParamList;
using ad::Shape;
using ad::Tensor;

/// Raw instability parameters plus the normalized pair fed to the networks.
struct GammaInput {
  double rho = 0.0;
  double beta = 10.0;

  std::pair<double, double> normalized() const { return {rho, beta / 40.0}; }
};

/// Builds the [B, 2] normalized parameter tensor for a batch sharing one
/// configuration.
inline Tensor gamma_tensor(Graph& g, const GammaInput& gamma, int batch) {
  const auto [a, b] = gamma.normalized();
  AlignedVec<double> buf(static_cast<std::size_t>(batch) * 2);
  for (int i = 0; i < batch; ++i) {
    buf[2 * i] = a;
    buf[2 * i + 1] = b;
  }
  return g.constant({batch, 2}, DType::real, buf.data());
}

/// A surrogate for the single-step solution operator. forward() rebuilds the
/// computation on the given graph, binding fresh leaves for every weight;
/// after backward(), accumulate_grads() folds the leaf gradients into the
/// persistent Param buffers.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string kind() const = 0;
  virtual int mesh() const = 0;

  /// state: [B, N] real, gamma: [B, 2] real (normalized); returns [B, N].
  virtual Tensor forward(Graph& g, const Tensor& state, const Tensor& gamma) = 0;

  ParamList all_params() {
    ParamList out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  ParamList trainable_params() {
    ParamList out;
    for (auto& p : params_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }
  Param* find_param(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  void accumulate_grads() {
    for (auto& [p, t] : bound_) ad::accumulate_grad(*p, t);
    bound_.clear();
  }

 protected:
  Param& add_param(std::string name, Shape shape, bool trainable = true) {
    params_.push_back(std::make_unique<Param>(std::move(name), std::move(shape), trainable));
    return *params_.back();
  }

  Tensor bind(Graph& g, Param& p) {
    Tensor t = ad::leaf(g, p);
    if (p.trainable) bound_.emplace_back(&p, t);
    return t;
  }

  std::vector<std::unique_ptr<Param>> params_;
  std::vector<std::pair<Param*, Tensor>> bound_;
};

}  // namespace flame::models
