#pragma once

#include <cmath>

#include <boost/math/special_functions/gamma.hpp>

namespace itdt::stats {

/// Upper tail P(X > x) for X ~ χ²(dof).
inline double chi_squared_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

/// Upper tail of the standard normal.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace itdt::stats
