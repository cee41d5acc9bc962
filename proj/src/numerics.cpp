#include "itdt/numerics.hpp"

#include <cmath>
#include <string>

#include "itdt/error.hpp"

namespace itdt {

namespace {

void require_square(const Eigen::Ref<const Matrix>& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": expected a non-empty square matrix, got " +
                    std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

}  // namespace

double max_abs(const Eigen::Ref<const Matrix>& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

bool near_rel(const Eigen::Ref<const Matrix>& actual,
              const Eigen::Ref<const Matrix>& reference, double rel_tol) {
  if (actual.rows() != reference.rows() || actual.cols() != reference.cols()) {
    return false;
  }
  const double scale = max_abs(reference);
  const double bound = scale < 1e-12 ? 1e-12 : rel_tol * scale;
  return max_abs(actual - reference) <= bound;
}

bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

bool is_symmetric(const Eigen::Ref<const Matrix>& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  return near_rel(m, m.transpose(), rel_tol);
}

Matrix symmetrized(const Eigen::Ref<const Matrix>& m) {
  return 0.5 * (m + m.transpose());
}

Matrix cholesky(const Eigen::Ref<const Matrix>& m) {
  require_square(m, "cholesky");
  const Eigen::Index n = m.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = m(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) throw NotPositiveDefiniteError(j, "cholesky");
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (m(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / ljj;
    }
  }
  return l;
}

double log_det_spd(const Eigen::Ref<const Matrix>& m) {
  return SpdFactor(m).log_det();
}

Matrix solve_spd(const Eigen::Ref<const Matrix>& m,
                 const Eigen::Ref<const Matrix>& rhs) {
  require_square(m, "solve_spd");
  if (rhs.rows() != m.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "solve_spd: rhs has " + std::to_string(rhs.rows()) +
                    " rows, matrix has " + std::to_string(m.rows()));
  }
  return SpdFactor(m).solve(rhs);
}

SvdResult svd(const Eigen::Ref<const Matrix>& m) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNonFiniteInput, "svd: non-finite entry");
  }
  Eigen::BDCSVD<Matrix> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success) {
    throw Error(ErrorCode::kConvergenceFailure, "svd did not converge");
  }
  return {dec.matrixU(), dec.singularValues(), dec.matrixV()};
}

double spectral_radius(const Eigen::Ref<const Matrix>& a) {
  require_square(a, "spectral_radius");
  Eigen::EigenSolver<Matrix> es(a, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::kConvergenceFailure, "eigenvalue iteration failed");
  }
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix clip_to_spd(const Eigen::Ref<const Matrix>& m, double floor) {
  require_square(m, "clip_to_spd");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m));
  const double top = es.eigenvalues().maxCoeff();
  Vector ev = es.eigenvalues().cwiseMax(std::max(floor, floor * top));
  Matrix out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return symmetrized(out);
}

Matrix discrete_lyapunov(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& q) {
  require_square(a, "discrete_lyapunov");
  if (spectral_radius(a) >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "discrete_lyapunov: A is not stable");
  }
  // X = Σ_k A^k Q A^kᵀ, accumulated as X_{j+1} = X_j + A_j X_j A_jᵀ, A_{j+1} = A_j².
  Matrix x = q;
  Matrix ak = a;
  for (int it = 0; it < 64; ++it) {
    Matrix inc = ak * x * ak.transpose();
    x += inc;
    ak = ak * ak;
    if (max_abs(inc) <= 1e-16 * max_abs(x)) break;
  }
  return symmetrized(x);
}

SpdFactor::SpdFactor(const Eigen::Ref<const Matrix>& m) {
  require_square(m, "SpdFactor");
  llt_.compute(m);
  const auto& l = llt_.matrixLLT();
  bool ok = llt_.info() == Eigen::Success;
  if (ok) {
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) {
        ok = false;
        break;
      }
    }
  }
  if (!ok) {
    // Re-run the scalar factorization to name the failing pivot.
    cholesky(m);
    throw NotPositiveDefiniteError(-1, "SpdFactor");
  }
  log_det_ = 2.0 * l.diagonal().array().log().sum();
}

Matrix SpdFactor::solve(const Eigen::Ref<const Matrix>& rhs) const {
  if (rhs.rows() != dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "SpdFactor::solve: row mismatch");
  }
  return llt_.solve(rhs);
}

double SpdFactor::quad_form(const Eigen::Ref<const Vector>& x) const {
  Vector z = x;
  llt_.matrixL().solveInPlace(z);
  return z.squaredNorm();
}

Matrix SpdFactor::inverse() const {
  return symmetrized(llt_.solve(Matrix::Identity(dim(), dim())));
}

}  // namespace itdt
