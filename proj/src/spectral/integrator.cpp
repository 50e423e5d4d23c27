#include "spectral/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "core/errors.hpp"

namespace flame::spectral {
namespace {

// Dormand-Prince 5(4) tableau. Row 7 doubles as the 5th-order weights (FSAL).
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// Difference between the 5th- and 4th-order weights, for the error estimate.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;
constexpr double kPiBeta = 0.04;
constexpr double kPiAlpha = 0.2 - 0.75 * kPiBeta;

bool all_finite(const AlignedVec<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

Dopri5::Dopri5(const SolverParams& params, const IntegratorConfig& config, int n)
    : params_(params), config_(config), n_(n), ws_(n), ytmp_(n), yerr_(n) {
  for (auto& k : k_) k.resize(n);
}

double Dopri5::error_norm(const AlignedVec<double>& y, const AlignedVec<double>& ynew,
                          const AlignedVec<double>& err) const {
  double acc = 0.0;
  for (int i = 0; i < n_; ++i) {
    double sc = config_.abs_tol + config_.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
    double r = err[i] / sc;
    acc += r * r;
  }
  return std::sqrt(acc / n_);
}

double Dopri5::initial_step(const FrontState& state, double t_target) {
  // Rough curvature-free guess; the controller refines it within a few steps.
  rhs(params_, state.values.data(), k_[0].data(), ws_);
  double d0 = 0.0, d1 = 0.0;
  for (int i = 0; i < n_; ++i) {
    double sc = config_.abs_tol + config_.rel_tol * std::abs(state.values[i]);
    double a = state.values[i] / sc;
    double b = k_[0][i] / sc;
    d0 += a * a;
    d1 += b * b;
  }
  d0 = std::sqrt(d0 / n_);
  d1 = std::sqrt(d1 / n_);
  double h = (d1 > 1e-12) ? 0.01 * d0 / d1 : 1e-6;
  if (h <= 0.0 || !std::isfinite(h)) h = 1e-6;
  return std::min(h, t_target - state.t);
}

void Dopri5::step_to(FrontState& state, double t_target) {
  if (state.size() != n_) throw ConfigError("integrator: state size does not match workspace");
  if (!(t_target >= state.t)) throw ConfigError("integrator: t_target must not precede state.t");
  if (t_target == state.t) return;

  AlignedVec<double>& y = state.values;
  double t = state.t;
  if (h_ <= 0.0) h_ = initial_step(state, t_target);
  // The FSAL cache is not trusted across calls: callers may have edited state.
  rhs(params_, y.data(), k_[0].data(), ws_);

  std::int64_t steps = 0;
  while (t < t_target) {
    if (++steps > config_.max_steps_per_call)
      throw NumericalError("integrator: step budget exhausted at t=" + std::to_string(t));

    double h = std::min(h_, t_target - t);
    bool clipped = h < h_;

    for (int i = 0; i < n_; ++i) ytmp_[i] = y[i] + h * a21 * k_[0][i];
    rhs(params_, ytmp_.data(), k_[1].data(), ws_);
    for (int i = 0; i < n_; ++i) ytmp_[i] = y[i] + h * (a31 * k_[0][i] + a32 * k_[1][i]);
    rhs(params_, ytmp_.data(), k_[2].data(), ws_);
    for (int i = 0; i < n_; ++i)
      ytmp_[i] = y[i] + h * (a41 * k_[0][i] + a42 * k_[1][i] + a43 * k_[2][i]);
    rhs(params_, ytmp_.data(), k_[3].data(), ws_);
    for (int i = 0; i < n_; ++i)
      ytmp_[i] = y[i] + h * (a51 * k_[0][i] + a52 * k_[1][i] + a53 * k_[2][i] + a54 * k_[3][i]);
    rhs(params_, ytmp_.data(), k_[4].data(), ws_);
    for (int i = 0; i < n_; ++i)
      ytmp_[i] = y[i] + h * (a61 * k_[0][i] + a62 * k_[1][i] + a63 * k_[2][i] + a64 * k_[3][i] +
                             a65 * k_[4][i]);
    rhs(params_, ytmp_.data(), k_[5].data(), ws_);
    // 5th-order solution, reusing ytmp_ as ynew.
    for (int i = 0; i < n_; ++i)
      ytmp_[i] = y[i] + h * (b1 * k_[0][i] + b3 * k_[2][i] + b4 * k_[3][i] + b5 * k_[4][i] +
                             b6 * k_[5][i]);
    rhs(params_, ytmp_.data(), k_[6].data(), ws_);
    for (int i = 0; i < n_; ++i)
      yerr_[i] = h * (e1 * k_[0][i] + e3 * k_[2][i] + e4 * k_[3][i] + e5 * k_[4][i] +
                      e6 * k_[5][i] + e7 * k_[6][i]);

    double err = error_norm(y, ytmp_, yerr_);
    if (!std::isfinite(err)) err = 1e10;

    if (err <= 1.0) {
      t += h;
      std::swap(y, ytmp_);
      std::swap(k_[0], k_[6]);  // FSAL
      if (!all_finite(y))
        throw NumericalError("integrator: non-finite state at t=" + std::to_string(t));
      double peak = 0.0;
      for (double v : y) peak = std::max(peak, std::abs(v));
      if (peak > config_.blowup_threshold)
        throw NumericalError("integrator: blow-up detected at t=" + std::to_string(t) +
                             " (max |phi| = " + std::to_string(peak) + ")");

      double fac = kSafety * std::pow(err > 0 ? err : 1e-16, -kPiAlpha) * std::pow(err_old_, kPiBeta);
      fac = std::clamp(fac, kMinFactor, kMaxFactor);
      err_old_ = std::max(err, 1e-4);
      if (!clipped) h_ = h * fac;
      // else keep the controller's step for the next call
    } else {
      double fac = std::clamp(kSafety * std::pow(err, -0.2), kMinFactor, 1.0);
      h_ = h * fac;
      if (h_ < 1e-14)
        throw NumericalError("integrator: step size underflow at t=" + std::to_string(t));
    }
  }
  state.t = t_target;
}

SolutionSequence Dopri5::simulate(const FrontState& init, int steps, double dt_out) {
  if (steps < 0) throw ConfigError("integrator: steps must be nonnegative");
  if (!(dt_out > 0.0)) throw ConfigError("integrator: dt_out must be positive");

  SolutionSequence seq;
  seq.params = params_;
  seq.t0 = init.t;
  seq.dt_out = dt_out;
  seq.n = n_;
  seq.data.resize(static_cast<std::size_t>(steps + 1) * n_);

  FrontState state = init;
  std::copy(state.values.begin(), state.values.end(), seq.data.begin());
  for (int i = 1; i <= steps; ++i) {
    step_to(state, init.t + i * dt_out);
    std::copy(state.values.begin(), state.values.end(),
              seq.data.begin() + static_cast<std::size_t>(i) * n_);
  }
  return seq;
}

}  // namespace flame::spectral
