#pragma once

#include <cmath>

#include "ad/param.hpp"
#include "core/rng.hpp"

namespace flame::models {

inline void fill_uniform(ad::Param& p, double bound, Rng& rng) {
  for (auto& v : p.value) v = bound * (2.0 * rng.uniform() - 1.0);
}

inline void init_fan_in(ad::Param& p, int fan_in, Rng& rng) {
  fill_uniform(p, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

/// Complex weights held as (re, im) buffers; the bound keeps |entry| below
/// `modulus` in magnitude.
inline void init_complex_pair(ad::Param& re, ad::Param& im, double modulus, Rng& rng) {
  const double bound = modulus / std::sqrt(2.0);
  fill_uniform(re, bound, rng);
  fill_uniform(im, bound, rng);
}

}  // namespace flame::models
