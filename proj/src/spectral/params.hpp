#pragma once

namespace flame::spectral {

/// Coefficients of the rescaled front equation
///   phi_t / tau + (phi_x)^2 / (2 beta^2)
///     = -mu phi_xxxx / beta^4 - nu phi_xx / beta^2 + rho Gamma(phi) / beta
/// on x in (-pi, pi]. Instances normally come from `from_rho_beta`, which
/// closes (mu, nu, tau) from the two free parameters.
struct SolverParams {
  double rho = 0.0;
  double beta = 10.0;
  double mu = 1.0;
  double nu = 1.0;
  double tau = 1.0;

  /// Linear growth rate of wavenumber kappa:
  ///   omega(kappa) = tau * (-mu q^4 + nu q^2 + rho q),  q = kappa / beta.
  double omega(double kappa) const;

  /// Closure: nu = mu - rho (neutral mode at kappa = beta), mu chosen by
  /// bisection so that max over kappa in (0, beta) of omega/tau equals 1/4,
  /// and tau = rho beta / 10 + (1 - rho). Requires rho in [0, 1], beta > 0.
  static SolverParams from_rho_beta(double rho, double beta);
};

/// Scaled peak of omega/tau over the unstable band for a trial mu; exposed
/// for tests of the closure search.
double closure_peak(double mu, double rho);

/// Laboratory-frame inputs; `to_scaled` maps them onto SolverParams without
/// applying the closure.
struct PhysicalParams {
  double a = 1.0;
  double b = 1.0;
  double c = 1.0;
  double heat_release = 0.0;  // Omega
  double lewis_shift = 0.0;   // Le*

  SolverParams to_scaled() const;
};

}  // namespace flame::spectral
