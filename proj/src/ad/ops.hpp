#pragma once

#include "ad/tensor.hpp"

namespace flame::ad {

// Elementwise; operands must share shape and dtype.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);  // real only

// Multiply by a compile-time-constant scalar (real or complex tensor).
Tensor scale(Graph& g, const Tensor& a, double s);

// Multiply a real tensor by a one-element real tensor (scalar with grads).
Tensor smul(Graph& g, const Tensor& s, const Tensor& x);

Tensor relu(Graph& g, const Tensor& x);

/// Same buffer, new shape; element count must be preserved.
Tensor reshape(Graph& g, const Tensor& x, Shape shape);

/// x: [B, Cin] or [B, Cin, N]; w: [Cout, Cin]; b: [Cout]. Contracts the
/// channel axis; the trailing mesh axis, when present, is untouched.
Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b);

/// Periodic 1-D convolution. x: [B, C, N], w: [F, C, K] with odd K, b: [F].
Tensor conv1d_periodic(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b);

/// Width-2, stride-2 max pool over the mesh axis; ties pick the lower index.
Tensor maxpool1d(Graph& g, const Tensor& x);

/// Nearest-neighbour upsampling by 2 over the mesh axis.
Tensor upsample2(Graph& g, const Tensor& x);

/// Concatenates [B, C_i, N] tensors along the channel axis.
Tensor concat(Graph& g, const std::vector<Tensor>& xs);

Tensor mean(Graph& g, const Tensor& x);
Tensor sum(Graph& g, const Tensor& x);

/// Unnormalized forward transform along the last axis: real [..., N] to
/// complex [..., N/2+1]. The adjoint halves interior bins and keeps the DC
/// and Nyquist bins single-counted.
Tensor rfft(Graph& g, const Tensor& x);

/// Normalized (1/N) inverse along the last axis: complex [..., K] to real
/// [..., n_out] with n_out = 2(K-1). Imaginary parts of the DC and Nyquist
/// bins are treated as zero in both directions.
Tensor irfft(Graph& g, const Tensor& z, int n_out);

Tensor make_complex(Graph& g, const Tensor& re, const Tensor& im);

/// Per-mode channel mixing: z: [B, C, Kf] complex, m: [Kk, C, C] complex,
/// out[b, i, k] = sum_j m[k, i, j] z[b, j, k] for k < Kk, zero beyond.
Tensor mode_mix(Graph& g, const Tensor& z, const Tensor& m);

/// Per-mode real gain: z: [B, C, Kf] complex, s: [B, Kf] real.
Tensor mode_scale(Graph& g, const Tensor& z, const Tensor& s);

/// Spreads per-band gains onto modes: d: [B, n_bands] real -> [B, kf] real.
/// Band i covers kappa in (kappa_max/2^(i+1), kappa_max/2^i]; the last band
/// also absorbs kappa = 0; modes above kappa_max get gain 0.
Tensor band_expand(Graph& g, const Tensor& d, int kappa_max, int kf);

/// Elementwise modulus of a complex tensor (gradient 0 at exact zeros).
Tensor complex_abs(Graph& g, const Tensor& z);

/// Per-sample broadcast multiply: x: [B, ...] real, s: [B] (or [B,1]) real.
Tensor batch_scale(Graph& g, const Tensor& x, const Tensor& s);

/// ||pred - target|| / ||target|| over whole tensors; with `per_sample` the
/// ratio is formed per leading-axis slice and averaged. `target` gets no
/// gradient.
Tensor relative_l2(Graph& g, const Tensor& pred, const Tensor& target, bool per_sample = false);

}  // namespace flame::ad
