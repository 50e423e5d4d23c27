#pragma once

#include <cstdint>
#include <vector>

#include "ad/param.hpp"

namespace flame::ad {

struct AdamConfig {
  double lr = 0.0025;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay: parameters are first shrunk by
/// (1 - lr * weight_decay), then moved by the bias-corrected moment update.
/// Throws NumericalError if any gradient entry is non-finite.
class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  void step();
  void zero_grad();

  /// Global L2 norm of all gradients; rescales them to max_norm when larger.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  const ParamList& params() const { return params_; }
  std::vector<AlignedVec<double>>& moment1() { return m_; }
  std::vector<AlignedVec<double>>& moment2() { return v_; }
  const std::vector<AlignedVec<double>>& moment1() const { return m_; }
  const std::vector<AlignedVec<double>>& moment2() const { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<AlignedVec<double>> m_, v_;
};

}  // namespace flame::ad
