#include "ad/optim.hpp"

#include <cmath>

#include "core/errors.hpp"

namespace flame::ad {

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  for (const Param* p : params_)
    for (double gv : p->grad)
      if (!std::isfinite(gv)) throw NumericalError("optimizer: non-finite gradient for " + p->name);

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;

  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::int64_t j = 0; j < p.size(); ++j) {
      const double gv = p.grad[j];
      p.value[j] *= decay;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gv;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gv * gv;
      p.value[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const Param* p : params_)
    for (double gv : p->grad) sq += gv * gv;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Param* p : params_)
      for (double& gv : p->grad) gv *= s;
  }
  return norm;
}

}  // namespace flame::ad
