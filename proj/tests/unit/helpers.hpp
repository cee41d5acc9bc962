#pragma once

#include <cstdint>
#include <random>

#include "itdt/numerics.hpp"

namespace itdt::test {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = nd(rng);
  }
  return m;
}

inline Matrix random_spd(Eigen::Index n, std::uint64_t seed) {
  const Matrix g = gaussian(n, n, seed);
  return g * g.transpose() + Matrix::Identity(n, n);
}

inline Matrix m1(double v) { return Matrix::Constant(1, 1, v); }
inline Vector v1(double v) { return Vector::Constant(1, v); }

}  // namespace itdt::test
