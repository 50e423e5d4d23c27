#include "spectral/params.hpp"

#include <cmath>
#include <string>

#include "core/errors.hpp"

namespace flame::spectral {
namespace {

double band_gain(double mu, double rho, double s) {
  double s2 = s * s;
  return (-mu * s2 + (mu - rho)) * s2 + rho * s;
}

// Maximizes band_gain over s in (0, 1): dense scan, then golden-section
// refinement around the best grid cell. The scanned maximum is kept as a
// candidate so exact grid hits (e.g. s = 1/2 at rho = 1) survive refinement.
double peak_over_band(double mu, double rho) {
  constexpr int kGrid = 4096;
  int best = 1;
  double best_val = band_gain(mu, rho, 1.0 / kGrid);
  for (int i = 2; i < kGrid; ++i) {
    double v = band_gain(mu, rho, static_cast<double>(i) / kGrid);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }

  double lo = static_cast<double>(best - 1) / kGrid;
  double hi = static_cast<double>(best + 1) / kGrid;
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = band_gain(mu, rho, x1);
  double f2 = band_gain(mu, rho, x2);
  while (hi - lo > 1e-13) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = band_gain(mu, rho, x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = band_gain(mu, rho, x1);
    }
  }
  return std::max(best_val, std::max(f1, f2));
}

}  // namespace

double closure_peak(double mu, double rho) { return peak_over_band(mu, rho); }

double SolverParams::omega(double kappa) const {
  double q = kappa / beta;
  double q2 = q * q;
  return tau * ((-mu * q2 + nu) * q2 + rho * q);
}

SolverParams SolverParams::from_rho_beta(double rho, double beta) {
  if (!(rho >= 0.0 && rho <= 1.0))
    throw ConfigError("params: rho must lie in [0, 1], got " + std::to_string(rho));
  if (!(beta > 0.0)) throw ConfigError("params: beta must be positive, got " + std::to_string(beta));

  // band_gain is nondecreasing in mu pointwise, so the peak is monotone and
  // the quarter-height constraint has a unique root in [0, 1].
  auto residual = [rho](double mu) { return peak_over_band(mu, rho) - 0.25; };

  double mu = 0.0;
  double g_lo = residual(0.0);
  double g_hi = residual(1.0);
  if (std::abs(g_lo) <= 1e-12) {
    mu = 0.0;
  } else if (std::abs(g_hi) <= 1e-12) {
    mu = 1.0;
  } else {
    if (g_lo > 0.0 || g_hi < 0.0)
      throw NumericalError("params: closure root not bracketed in [0, 1]");
    double lo = 0.0, hi = 1.0;
    while (hi - lo > 1e-10) {
      double mid = 0.5 * (lo + hi);
      if (residual(mid) < 0.0)
        lo = mid;
      else
        hi = mid;
    }
    mu = 0.5 * (lo + hi);
  }

  SolverParams p;
  p.rho = rho;
  p.beta = beta;
  p.mu = mu;
  p.nu = mu - rho;
  p.tau = rho * beta / 10.0 + (1.0 - rho);
  return p;
}

SolverParams PhysicalParams::to_scaled() const {
  if (!(a > 0.0 && b > 0.0 && c > 0.0))
    throw ConfigError("params: physical scales a, b, c must be positive");
  SolverParams p;
  p.beta = b / c;
  p.nu = lewis_shift / (c * c);
  p.rho = (1.0 - heat_release) * b * c;
  p.mu = 4.0 * (1.0 + lewis_shift) * (1.0 + lewis_shift) / (b * b * c * c * c * c);
  p.tau = 1.0 / (a * a * b * b);
  return p;
}

}  // namespace flame::spectral
