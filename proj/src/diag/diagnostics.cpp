#include "diag/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <limits>

#include "core/errors.hpp"
#include "core/fft.hpp"
#include "spectral/state.hpp"

namespace flame::diag {

namespace {

void spectral_derivative(const double* phi, int n, double* dphi) {
  const int nb = n / 2 + 1;
  std::vector<std::complex<double>> z(nb);
  fft::r2c(n, phi, z.data());
  z[0] = 0.0;
  for (int k = 1; k < nb - 1; ++k) z[k] = std::complex<double>(-k * z[k].imag(), k * z[k].real());
  z[nb - 1] = 0.0;  // the unpaired Nyquist mode has no real derivative
  fft::c2r(n, z.data(), dphi);
  const double inv_n = 1.0 / n;
  for (int j = 0; j < n; ++j) dphi[j] *= inv_n;
}

/// Normalized modal magnitudes |F_k| / N for k = 0..n/2.
void modal_magnitudes(const double* state, int n, std::vector<double>& mags) {
  const int nb = n / 2 + 1;
  std::vector<std::complex<double>> z(nb);
  fft::r2c(n, state, z.data());
  mags.resize(nb);
  const double inv_n = 1.0 / n;
  for (int k = 0; k < nb; ++k) mags[k] = std::abs(z[k]) * inv_n;
}

std::vector<double> jacobian_estimate(const MapFn& map, int mesh, int kappa_max, double eps) {
  const std::size_t n = static_cast<std::size_t>(mesh);
  std::vector<double> in(n), out(n), base_mags, mags;
  std::fill(in.begin(), in.end(), 0.0);
  map(in.data(), out.data());
  modal_magnitudes(out.data(), mesh, base_mags);

  std::vector<double> j(static_cast<std::size_t>(kappa_max) * kappa_max);
  for (int kappa = 1; kappa <= kappa_max; ++kappa) {
    for (int jx = 0; jx < mesh; ++jx)
      in[jx] = 2.0 * eps * std::cos(kappa * spectral::grid_x(mesh, jx));
    map(in.data(), out.data());
    modal_magnitudes(out.data(), mesh, mags);
    for (int kbar = 1; kbar <= kappa_max; ++kbar)
      j[static_cast<std::size_t>(kappa - 1) * kappa_max + (kbar - 1)] =
          (mags[kbar] - base_mags[kbar]) / eps;
  }
  return j;
}

void ensure_open(std::ofstream& f, const std::string& path) {
  if (!f) throw IoError("diagnostics: cannot write " + path);
}

}  // namespace

double front_length(const double* phi, int n) {
  spectral::check_mesh(n);
  std::vector<double> dphi(n);
  spectral_derivative(phi, n, dphi.data());
  double acc = 0.0;
  for (int j = 0; j < n; ++j) acc += std::sqrt(1.0 + dphi[j] * dphi[j]);
  return acc / n;
}

std::vector<double> accumulated_error(const std::vector<double>& predicted,
                                      const std::vector<double>& reference, int mesh) {
  if (mesh <= 0) throw ConfigError("accumulated_error: mesh must be positive");
  if (predicted.size() != reference.size())
    throw ConfigError("accumulated_error: sequence lengths differ");
  if (predicted.empty() || predicted.size() % static_cast<std::size_t>(mesh) != 0)
    throw ConfigError("accumulated_error: size is not a whole number of states");

  const std::size_t rows = predicted.size() / mesh;
  std::vector<double> curve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* p = predicted.data() + i * mesh;
    const double* r = reference.data() + i * mesh;
    double dd = 0.0, rr = 0.0;
    for (int jx = 0; jx < mesh; ++jx) {
      const double d = p[jx] - r[jx];
      dd += d * d;
      rr += r[jx] * r[jx];
    }
    if (rr <= 0.0) throw NumericalError("accumulated_error: zero reference norm");
    curve[i] = std::sqrt(dd) / std::sqrt(rr);
  }
  return curve;
}

int first_exceed(const std::vector<double>& curve, double threshold) {
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (curve[i] > threshold) return static_cast<int>(i);
  return -1;
}

std::vector<double> autocorrelation(const std::vector<SeqView>& sequences,
                                    const AutocorrOptions& opts) {
  if (sequences.empty()) throw ConfigError("autocorrelation: no sequences");
  const int n = sequences.front().mesh;
  spectral::check_mesh(n);
  if (opts.t_min < 0 || opts.t_max <= opts.t_min)
    throw ConfigError("autocorrelation: window out of range");
  for (const SeqView& s : sequences) {
    if (s.mesh != n) throw ConfigError("autocorrelation: mesh mismatch across sequences");
    if (s.steps < opts.t_max) throw ConfigError("autocorrelation: window out of range");
  }

  const int nb = n / 2 + 1;
  std::vector<double> snap(n), y(n), acc(n, 0.0);
  std::vector<std::complex<double>> z(nb);
  std::int64_t count = 0;
  for (const SeqView& s : sequences) {
    for (int i = opts.t_min + 1; i <= opts.t_max; ++i) {
      const double* row = s.row(i);
      std::copy(row, row + n, snap.begin());
      if (opts.remove_mean) {
        double mean = 0.0;
        for (double v : snap) mean += v;
        mean /= n;
        for (double& v : snap) v -= mean;
      }
      fft::r2c(n, snap.data(), z.data());
      for (int k = 0; k < nb; ++k) z[k] = std::norm(z[k]);
      fft::c2r(n, z.data(), y.data());
      if (y[0] <= 0.0) throw NumericalError("autocorrelation: zero-variance snapshot");
      const double inv = 1.0 / y[0];
      acc[0] += 1.0;
      for (int jx = 1; jx < n; ++jx) acc[jx] += 0.5 * (y[jx] + y[n - jx]) * inv;
      ++count;
    }
  }
  for (double& v : acc) v /= static_cast<double>(count);
  return acc;
}

JacobianResult operator_jacobian(const MapFn& map, int mesh, int kappa_max,
                                 const JacobianOptions& opts) {
  spectral::check_mesh(mesh);
  if (kappa_max < 1 || kappa_max > mesh / 2 - 1)
    throw ConfigError("operator_jacobian: kappa_max must lie in [1, mesh/2 - 1]");
  if (opts.epsilon <= 0.0) throw ConfigError("operator_jacobian: epsilon must be positive");

  JacobianResult res;
  res.mesh = mesh;
  res.kappa_max = kappa_max;
  res.epsilon = opts.epsilon;
  res.j = jacobian_estimate(map, mesh, kappa_max, opts.epsilon);

  if (opts.richardson) {
    const std::vector<double> half = jacobian_estimate(map, mesh, kappa_max, opts.epsilon / 2.0);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < res.j.size(); ++i) {
      diff = std::max(diff, std::abs(res.j[i] - half[i]));
      scale = std::max(scale, std::abs(half[i]));
    }
    if (diff > opts.richardson_tol * std::max(scale, 1e-12))
      throw NumericalError("operator_jacobian: epsilon too large, nonlinear response detected");
  }
  return res;
}

JacobianResult operator_jacobian_ad(models::Model& model, const models::GammaInput& gamma,
                                    int kappa_max, double epsilon) {
  const int n = model.mesh();
  spectral::check_mesh(n);
  if (kappa_max < 1 || kappa_max > n / 2 - 1)
    throw ConfigError("operator_jacobian_ad: kappa_max must lie in [1, mesh/2 - 1]");
  if (epsilon <= 0.0) throw ConfigError("operator_jacobian_ad: epsilon must be positive");

  const int nb = n / 2 + 1;
  JacobianResult res;
  res.mesh = n;
  res.kappa_max = kappa_max;
  res.epsilon = epsilon;
  res.j.assign(static_cast<std::size_t>(kappa_max) * kappa_max, 0.0);

  std::vector<double> direction(n), input(n), seed(2 * nb, 0.0);
  for (int kappa = 1; kappa <= kappa_max; ++kappa) {
    for (int jx = 0; jx < n; ++jx) direction[jx] = 2.0 * std::cos(kappa * spectral::grid_x(n, jx));
    for (int jx = 0; jx < n; ++jx) input[jx] = epsilon * direction[jx];
    for (int kbar = 1; kbar <= kappa_max; ++kbar) {
      ad::Graph g;
      ad::Tensor x = g.value({1, n}, ad::DType::real, input.data(), true);
      ad::Tensor gam = models::gamma_tensor(g, gamma, 1);
      ad::Tensor out = model.forward(g, x, gam);
      ad::Tensor spec = ad::rfft(g, out);
      ad::Tensor mag = ad::complex_abs(g, spec);
      std::fill(seed.begin(), seed.end(), 0.0);
      seed[kbar] = 1.0 / n;
      g.backward(mag, seed.data());
      model.accumulate_grads();
      double dot = 0.0;
      const auto& gx = x.grad();
      for (int jx = 0; jx < n; ++jx) dot += gx[jx] * direction[jx];
      res.j[static_cast<std::size_t>(kappa - 1) * kappa_max + (kbar - 1)] = dot;
    }
  }
  for (auto* p : model.trainable_params()) p->zero_grad();
  return res;
}

DispersionCurve measured_dispersion(const MapFn& map, int mesh, int kappa_max, double dt,
                                    const JacobianOptions& opts) {
  if (dt <= 0.0) throw ConfigError("measured_dispersion: dt must be positive");
  const JacobianResult jac = operator_jacobian(map, mesh, kappa_max, opts);
  DispersionCurve curve;
  for (int kappa = 1; kappa <= kappa_max; ++kappa) {
    const double jd = jac.at(kappa, kappa);
    curve.kappa.push_back(kappa);
    curve.omega.push_back(jd > 0.0 ? std::log(jd) / dt
                                   : -std::numeric_limits<double>::infinity());
  }
  return curve;
}

MapFn solver_step_map(const spectral::SolverParams& params, int mesh, double dt,
                      const spectral::IntegratorConfig& config) {
  spectral::check_mesh(mesh);
  if (dt <= 0.0) throw ConfigError("solver_step_map: dt must be positive");
  return [params, mesh, dt, config](const double* in, double* out) {
    spectral::Dopri5 solver(params, config, mesh);
    spectral::FrontState s(mesh);
    std::copy(in, in + mesh, s.values.begin());
    solver.step_to(s, dt);
    std::copy(s.values.begin(), s.values.end(), out);
  };
}

MapFn model_step_map(models::Model& model, const models::GammaInput& gamma) {
  const int n = model.mesh();
  return [&model, gamma, n](const double* in, double* out) {
    ad::Graph g;
    ad::Tensor x = g.constant({1, n}, ad::DType::real, in);
    ad::Tensor gam = models::gamma_tensor(g, gamma, 1);
    ad::Tensor pred = model.forward(g, x, gam);
    model.accumulate_grads();
    std::copy(pred.values().begin(), pred.values().end(), out);
  };
}

std::string diag_filename(const std::string& diag, double rho, double beta) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "_%.6g_%.6g.csv", rho, beta);
  return diag + buf;
}

void write_front_length_csv(const std::string& path, double dt,
                            const std::vector<double>& length) {
  std::ofstream f(path, std::ios::trunc);
  ensure_open(f, path);
  f << "t,front_length\n";
  char buf[80];
  for (std::size_t i = 0; i < length.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", i * dt, length[i]);
    f << buf << '\n';
  }
}

void write_error_csv(const std::string& path, double dt, const std::vector<double>& error,
                     double threshold) {
  std::ofstream f(path, std::ios::trunc);
  ensure_open(f, path);
  f << "t,rel_l2,exceeds_threshold\n";
  char buf[96];
  for (std::size_t i = 0; i < error.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d", i * dt, error[i],
                  error[i] > threshold ? 1 : 0);
    f << buf << '\n';
  }
}

void write_autocorr_csv(const std::string& path, const std::vector<double>& r_values) {
  std::ofstream f(path, std::ios::trunc);
  ensure_open(f, path);
  f << "shift_index,r,autocorrelation\n";
  const int n = static_cast<int>(r_values.size());
  char buf[96];
  for (int j = 0; j < n; ++j) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g", j, 2.0 * M_PI * j / n, r_values[j]);
    f << buf << '\n';
  }
}

void write_dispersion_csv(const std::string& path, const DispersionCurve& curve,
                          const std::vector<double>& analytic) {
  if (!analytic.empty() && analytic.size() != curve.kappa.size())
    throw ConfigError("write_dispersion_csv: analytic column length mismatch");
  std::ofstream f(path, std::ios::trunc);
  ensure_open(f, path);
  f << (analytic.empty() ? "kappa,omega_measured\n" : "kappa,omega_measured,omega_analytic\n");
  char buf[120];
  for (std::size_t i = 0; i < curve.kappa.size(); ++i) {
    if (analytic.empty())
      std::snprintf(buf, sizeof buf, "%d,%.17g", curve.kappa[i], curve.omega[i]);
    else
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g", curve.kappa[i], curve.omega[i],
                    analytic[i]);
    f << buf << '\n';
  }
}

void write_jacobian_csv(const std::string& path, const JacobianResult& jac) {
  std::ofstream f(path, std::ios::trunc);
  ensure_open(f, path);
  f << "kappa,kappa_bar,jacobian\n";
  char buf[96];
  for (int kappa = 1; kappa <= jac.kappa_max; ++kappa)
    for (int kbar = 1; kbar <= jac.kappa_max; ++kbar) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g", kappa, kbar, jac.at(kappa, kbar));
      f << buf << '\n';
    }
}

}  // namespace flame::diag
