#pragma once

#include <Eigen/Dense>

namespace itdt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Largest absolute entry; 0 for empty matrices.
double max_abs(const Eigen::Ref<const Matrix>& m);

/// Max-norm comparison scaled by ‖reference‖_max, with an absolute fallback
/// of 1e-12 when the reference is (numerically) zero.
bool near_rel(const Eigen::Ref<const Matrix>& actual,
              const Eigen::Ref<const Matrix>& reference, double rel_tol);

bool all_finite(const Eigen::Ref<const Matrix>& m);

/// Symmetric within `rel_tol` relative to the largest entry.
bool is_symmetric(const Eigen::Ref<const Matrix>& m, double rel_tol = 1e-9);

Matrix symmetrized(const Eigen::Ref<const Matrix>& m);

/// Lower-triangular L with L·Lᵀ = m. Throws NotPositiveDefiniteError naming
/// the first pivot that is not strictly positive.
Matrix cholesky(const Eigen::Ref<const Matrix>& m);

/// ln det(m) = 2·Σ ln L_ii.
double log_det_spd(const Eigen::Ref<const Matrix>& m);

/// Solves m·x = rhs through the Cholesky factor (no explicit inverse).
Matrix solve_spd(const Eigen::Ref<const Matrix>& m,
                 const Eigen::Ref<const Matrix>& rhs);

struct SvdResult {
  Matrix u;
  Vector s;  // descending, nonnegative
  Matrix v;
};

SvdResult svd(const Eigen::Ref<const Matrix>& m);

/// Exact spectral radius from the eigenvalues of a square matrix.
double spectral_radius(const Eigen::Ref<const Matrix>& a);

/// Nearest symmetric matrix whose eigenvalues are all ≥ max(floor, floor·λ_max).
Matrix clip_to_spd(const Eigen::Ref<const Matrix>& m, double floor = 1e-10);

/// Solution X of X = A X Aᵀ + Q for stable A (squared-doubling iteration).
Matrix discrete_lyapunov(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& q);

/// Reusable Cholesky factorization of an SPD matrix. Immutable once built.
class SpdFactor {
 public:
  SpdFactor() = default;
  explicit SpdFactor(const Eigen::Ref<const Matrix>& m);

  Eigen::Index dim() const { return llt_.rows(); }
  double log_det() const { return log_det_; }
  Matrix lower() const { return llt_.matrixL(); }
  Matrix solve(const Eigen::Ref<const Matrix>& rhs) const;
  /// Squared Mahalanobis norm xᵀ m⁻¹ x, via one triangular solve.
  double quad_form(const Eigen::Ref<const Vector>& x) const;
  Matrix inverse() const;

 private:
  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
};

}  // namespace itdt
