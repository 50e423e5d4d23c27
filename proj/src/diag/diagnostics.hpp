#pragma once

#include <functional>
#include <string>
#include <vector>

#include "models/model.hpp"
#include "spectral/integrator.hpp"

namespace flame::diag {

/// Normalized front length (1/2π)∫√(1+φ_x²)dx with a spectral derivative;
/// on the uniform periodic grid the trapezoid rule is the plain mean.
double front_length(const double* phi, int n);

/// Per-snapshot relative L2 error between two sequences stored as rows of
/// `mesh` doubles. Throws on layout mismatch or a zero reference row.
std::vector<double> accumulated_error(const std::vector<double>& predicted,
                                      const std::vector<double>& reference, int mesh);

/// First index whose value exceeds the threshold, or -1 if none does.
int first_exceed(const std::vector<double>& curve, double threshold = 0.1);

/// View over one stored sequence: steps+1 rows of `mesh` doubles.
struct SeqView {
  const double* data = nullptr;
  int steps = 0;
  int mesh = 0;

  const double* row(int i) const { return data + static_cast<std::size_t>(i) * mesh; }
};

struct AutocorrOptions {
  int t_min = 1000;  // snapshots with t_min < i <= t_max enter the average
  int t_max = 4000;
  bool remove_mean = true;  // subtract each snapshot's spatial mean first
};

/// Mean circular autocorrelation R(r) over the selected snapshots of every
/// sequence; index j corresponds to the shift r = j·2π/N. Exactly even and
/// R(0) = 1 by construction.
std::vector<double> autocorrelation(const std::vector<SeqView>& sequences,
                                    const AutocorrOptions& opts = {});

/// A one-step map on mesh states, shared by the integrator and the models.
using MapFn = std::function<void(const double* in, double* out)>;

struct JacobianOptions {
  double epsilon = 1e-6;
  bool richardson = true;  // re-estimate at epsilon/2 and compare
  double richardson_tol = 0.01;
};

struct JacobianResult {
  int mesh = 0;
  int kappa_max = 0;
  double epsilon = 0.0;
  std::vector<double> j;  // [kappa_max, kappa_max]; row κ-1, column κ̄-1

  double at(int kappa, int kbar) const {
    return j[static_cast<std::size_t>(kappa - 1) * kappa_max + (kbar - 1)];
  }
};

/// Modal response J(κ,κ̄): perturb the zero state by 2ε·cos(κx), apply the
/// map, take modal magnitudes |F|/N, and difference against the response to
/// the unperturbed state, for κ, κ̄ in 1..kappa_max.
JacobianResult operator_jacobian(const MapFn& map, int mesh, int kappa_max,
                                 const JacobianOptions& opts = {});

/// Same quantity via reverse-mode differentiation through the model,
/// evaluated at the finite-difference midpoint amplitude.
JacobianResult operator_jacobian_ad(models::Model& model, const models::GammaInput& gamma,
                                    int kappa_max, double epsilon = 1e-6);

struct DispersionCurve {
  std::vector<int> kappa;
  std::vector<double> omega;  // log J(κ,κ)/dt; -inf where J(κ,κ) <= 0
};

/// Measured growth rates from the diagonal of the modal response.
DispersionCurve measured_dispersion(const MapFn& map, int mesh, int kappa_max, double dt,
                                    const JacobianOptions& opts = {});

/// One integrator step of length dt as a map on states. Each call uses a
/// fresh integrator so results do not depend on evaluation order.
MapFn solver_step_map(const spectral::SolverParams& params, int mesh, double dt,
                      const spectral::IntegratorConfig& config = {});

/// One application of the learned operator at fixed γ.
MapFn model_step_map(models::Model& model, const models::GammaInput& gamma);

/// "{diag}_{rho}_{beta}.csv" with %.6g parameter formatting.
std::string diag_filename(const std::string& diag, double rho, double beta);

void write_front_length_csv(const std::string& path, double dt,
                            const std::vector<double>& length);
void write_error_csv(const std::string& path, double dt, const std::vector<double>& error,
                     double threshold = 0.1);
void write_autocorr_csv(const std::string& path, const std::vector<double>& r_values);
void write_dispersion_csv(const std::string& path, const DispersionCurve& curve,
                          const std::vector<double>& analytic);  // analytic may be empty
void write_jacobian_csv(const std::string& path, const JacobianResult& jac);

}  // namespace flame::diag
