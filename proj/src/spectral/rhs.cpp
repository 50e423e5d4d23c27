#include "spectral/rhs.hpp"

#include "core/fft.hpp"

namespace flame::spectral {

RhsWorkspace::RhsWorkspace(int n) : n_(n), fine_n_(3 * n / 2) {
  check_mesh(n);
  spec.resize(n_ / 2 + 1);
  fine_spec.resize(fine_n_ / 2 + 1);
  fine.resize(fine_n_);
  out_spec.resize(n_ / 2 + 1);
}

void rhs(const SolverParams& p, const double* phi, double* out, RhsWorkspace& ws) {
  const int n = ws.n();
  const int m = ws.fine_n();
  const int half = n / 2;
  const double inv_n = 1.0 / n;

  fft::r2c(n, phi, ws.spec.data());

  // Slope coefficients, zero-padded onto the fine grid. Nyquist is dropped.
  for (int k = 0; k < half; ++k)
    ws.fine_spec[k] = std::complex<double>(0.0, k * inv_n) * ws.spec[k];
  for (int k = half; k <= m / 2; ++k) ws.fine_spec[k] = 0.0;
  fft::c2r(m, ws.fine_spec.data(), ws.fine.data());

  for (int j = 0; j < m; ++j) ws.fine[j] *= ws.fine[j];
  fft::r2c(m, ws.fine.data(), ws.fine_spec.data());

  const double quad_coeff = p.tau / (2.0 * p.beta * p.beta) / m;
  for (int k = 0; k <= half; ++k)
    ws.out_spec[k] = p.omega(k) * inv_n * ws.spec[k] - quad_coeff * ws.fine_spec[k];
  // On the coarse mesh the Nyquist bin stands for both +-n/2, so the
  // one-sided fine-grid coefficient enters twice.
  ws.out_spec[half] = p.omega(half) * inv_n * ws.spec[half] - 2.0 * quad_coeff * ws.fine_spec[half];
  ws.out_spec[0].imag(0.0);
  ws.out_spec[half].imag(0.0);
  fft::c2r(n, ws.out_spec.data(), out);
}

void gamma_op(const double* phi, double* out, RhsWorkspace& ws) {
  const int n = ws.n();
  const double inv_n = 1.0 / n;
  fft::r2c(n, phi, ws.spec.data());
  for (int k = 0; k <= n / 2; ++k) ws.out_spec[k] = k * inv_n * ws.spec[k];
  ws.out_spec[0] = 0.0;
  fft::c2r(n, ws.out_spec.data(), out);
}

void slope(const double* phi, double* out, RhsWorkspace& ws) {
  const int n = ws.n();
  const double inv_n = 1.0 / n;
  fft::r2c(n, phi, ws.spec.data());
  for (int k = 0; k < n / 2; ++k)
    ws.out_spec[k] = std::complex<double>(0.0, k * inv_n) * ws.spec[k];
  ws.out_spec[n / 2] = 0.0;
  fft::c2r(n, ws.out_spec.data(), out);
}

FrontState gamma_op(const FrontState& s) {
  RhsWorkspace ws(s.size());
  FrontState out(s.size(), s.t);
  gamma_op(s.values.data(), out.values.data(), ws);
  return out;
}

FrontState slope(const FrontState& s) {
  RhsWorkspace ws(s.size());
  FrontState out(s.size(), s.t);
  slope(s.values.data(), out.values.data(), ws);
  return out;
}

}  // namespace flame::spectral
