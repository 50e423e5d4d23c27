#pragma once

#include <complex>
#include <cstddef>

namespace flame::fft {

/// Forward real-to-complex transform, unnormalized:
///   out[k] = sum_j in[j] exp(-2 pi i j k / n),  k = 0..n/2.
/// `in` is length n, `out` length n/2+1. Input is preserved.
void r2c(int n, const double* in, std::complex<double>* out);

/// Inverse complex-to-real transform, unnormalized (scale by 1/n to invert
/// r2c). Assumes Hermitian symmetry; the imaginary parts of the DC and
/// Nyquist entries are ignored. Input is preserved.
void c2r(int n, const std::complex<double>* in, double* out);

/// Batched variants over `rows` contiguous transforms.
void r2c_many(int n, int rows, const double* in, std::complex<double>* out);
void c2r_many(int n, int rows, const std::complex<double>* in, double* out);

/// Drops all cached plans (mainly for leak-checking in tests).
void clear_plan_cache();

}  // namespace flame::fft
