#pragma once

#include <cstdint>
#include <vector>

#include "spectral/rhs.hpp"

namespace flame::spectral {

struct IntegratorConfig {
  double abs_tol = 1e-9;
  double rel_tol = 1e-7;
  double blowup_threshold = 1e6;
  std::int64_t max_steps_per_call = 4'000'000;  // accepted + rejected, per step_to
};

/// Output of `simulate`: states at t0 + i * dt_out, i = 0..steps, stored
/// row-major as [steps+1, n].
struct SolutionSequence {
  SolverParams params;
  double t0 = 0.0;
  double dt_out = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  std::vector<double> data;

  int steps() const { return n == 0 ? 0 : static_cast<int>(data.size()) / n - 1; }
  const double* state(int i) const { return data.data() + static_cast<std::size_t>(i) * n; }
};

/// Embedded Dormand-Prince 5(4) pair with a PI step-size controller. The
/// instance carries the step size across calls, so consecutive `step_to`
/// calls on the same trajectory do not restart the controller.
class Dopri5 {
 public:
  Dopri5(const SolverParams& params, const IntegratorConfig& config, int n);

  /// Advances `state` in place to exactly t_target (>= state.t). Throws
  /// NumericalError on blow-up, non-finite values, or step-count exhaustion.
  void step_to(FrontState& state, double t_target);

  /// Integrates `steps` output intervals of length dt_out from `init`.
  SolutionSequence simulate(const FrontState& init, int steps, double dt_out);

  const SolverParams& params() const { return params_; }

 private:
  double error_norm(const AlignedVec<double>& y, const AlignedVec<double>& ynew,
                    const AlignedVec<double>& err) const;
  double initial_step(const FrontState& state, double t_target);

  SolverParams params_;
  IntegratorConfig config_;
  int n_;
  RhsWorkspace ws_;
  double h_ = 0.0;        // carried step size; 0 means "pick fresh"
  double err_old_ = 1e-4; // PI controller memory
  AlignedVec<double> k_[7];
  AlignedVec<double> ytmp_;
  AlignedVec<double> yerr_;
};

}  // namespace flame::spectral
