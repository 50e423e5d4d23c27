#pragma once

#include <cmath>

#include "core/aligned.hpp"
#include "core/errors.hpp"
#include "core/rng.hpp"

namespace flame::spectral {

inline constexpr int kDefaultMesh = 256;

/// Front displacement sampled on the uniform periodic mesh
///   x_j = -pi + 2 pi j / n,  j = 0..n-1,
/// with x = -pi identified with x = pi.
struct FrontState {
  AlignedVec<double> values;
  double t = 0.0;

  FrontState() = default;
  explicit FrontState(int n, double t0 = 0.0) : values(n, 0.0), t(t0) {}

  int size() const { return static_cast<int>(values.size()); }
};

inline double grid_x(int n, int j) { return -M_PI + 2.0 * M_PI * j / n; }

inline void check_mesh(int n) {
  if (n < 8 || n % 4 != 0)
    throw ConfigError("state: mesh size must be a multiple of 4 and >= 8");
}

/// I.i.d. uniform values in [lo, hi) at every mesh point.
inline FrontState random_state(int n, std::uint64_t seed, double lo, double hi) {
  check_mesh(n);
  FrontState s(n);
  Rng rng(seed);
  for (double& v : s.values) v = rng.uniform(lo, hi);
  return s;
}

}  // namespace flame::spectral
