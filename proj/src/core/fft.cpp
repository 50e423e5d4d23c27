#include "core/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

#include "core/aligned.hpp"
#include "core/errors.hpp"

namespace flame::fft {
namespace {

// Plans are cached per (direction, n, rows). Creation is serialized; execution
// through the new-array interface is thread-safe. FFTW_ESTIMATE keeps plan
// selection independent of runtime timing, which keeps outputs reproducible.
// FFTW_UNALIGNED lets plans run on any caller buffer.

struct PlanCache {
  std::mutex mu;
  std::map<std::tuple<int, int, int>, fftw_plan> plans;

  ~PlanCache() { clear(); }

  void clear() {
    std::lock_guard<std::mutex> lock(mu);
    for (auto& [key, plan] : plans) fftw_destroy_plan(plan);
    plans.clear();
  }

  fftw_plan get(int dir, int n, int rows) {
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(dir, n, rows);
    auto it = plans.find(key);
    if (it != plans.end()) return it->second;

    AlignedVec<double> real(static_cast<std::size_t>(n) * rows);
    AlignedVec<std::complex<double>> cplx(static_cast<std::size_t>(n / 2 + 1) * rows);
    int dims[1] = {n};
    fftw_plan plan = nullptr;
    if (dir == 0) {
      plan = fftw_plan_many_dft_r2c(1, dims, rows, real.data(), nullptr, 1, n,
                                    reinterpret_cast<fftw_complex*>(cplx.data()), nullptr, 1,
                                    n / 2 + 1, FFTW_ESTIMATE | FFTW_UNALIGNED);
    } else {
      plan = fftw_plan_many_dft_c2r(1, dims, rows, reinterpret_cast<fftw_complex*>(cplx.data()),
                                    nullptr, 1, n / 2 + 1, real.data(), nullptr, 1, n,
                                    FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_PRESERVE_INPUT);
    }
    if (!plan) throw NumericalError("fft: plan creation failed for n=" + std::to_string(n));
    plans.emplace(key, plan);
    return plan;
  }
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

void check_n(int n) {
  if (n < 4 || n % 2 != 0) throw ConfigError("fft: transform size must be even and >= 4");
}

}  // namespace

void r2c(int n, const double* in, std::complex<double>* out) { r2c_many(n, 1, in, out); }

void c2r(int n, const std::complex<double>* in, double* out) { c2r_many(n, 1, in, out); }

void r2c_many(int n, int rows, const double* in, std::complex<double>* out) {
  check_n(n);
  fftw_plan plan = cache().get(0, n, rows);
  fftw_execute_dft_r2c(plan, const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
}

void c2r_many(int n, int rows, const std::complex<double>* in, double* out) {
  check_n(n);
  fftw_plan plan = cache().get(1, n, rows);
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in)),
                       out);
}

void clear_plan_cache() { cache().clear(); }

}  // namespace flame::fft
