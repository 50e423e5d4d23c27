#pragma once

#include <complex>

#include "core/aligned.hpp"
#include "spectral/params.hpp"
#include "spectral/state.hpp"

namespace flame::spectral {

/// Scratch buffers for one mesh size. Not shareable across threads; each
/// worker owns one. The quadratic term is evaluated on a 3n/2 grid so that
/// retained modes stay alias-free.
class RhsWorkspace {
 public:
  explicit RhsWorkspace(int n);

  int n() const { return n_; }
  int fine_n() const { return fine_n_; }

  AlignedVec<std::complex<double>> spec;       // n/2+1
  AlignedVec<std::complex<double>> fine_spec;  // fine_n/2+1
  AlignedVec<double> fine;                     // fine_n
  AlignedVec<std::complex<double>> out_spec;   // n/2+1

 private:
  int n_;
  int fine_n_;
};

/// Time derivative of the front:
///   phi_t = tau * ( -(phi_x)^2/(2 beta^2) - mu phi_xxxx/beta^4
///                   - nu phi_xx/beta^2 + rho Gamma(phi)/beta ).
/// `phi` and `out` are length ws.n() and may not alias.
void rhs(const SolverParams& p, const double* phi, double* out, RhsWorkspace& ws);

/// Nonlocal gain operator: multiplies each mode by |kappa|. Output has zero
/// mean; the operator is self-adjoint and positive semi-definite.
void gamma_op(const double* phi, double* out, RhsWorkspace& ws);

/// Spectral slope d(phi)/dx with the Nyquist mode dropped.
void slope(const double* phi, double* out, RhsWorkspace& ws);

FrontState gamma_op(const FrontState& s);
FrontState slope(const FrontState& s);

}  // namespace flame::spectral
