#include "itdt/kalman.hpp"

#include <string>

#include "itdt/error.hpp"
#include "text_util.hpp"

namespace itdt {

Matrix riccati_map(const StateSpaceModel& model, const Eigen::Ref<const Matrix>& P) {
  const Matrix& A = model.A;
  const Matrix& C = model.C;
  const Matrix s = symmetrized(C * P * C.transpose() + model.R);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kNotPositiveDefinite, "innovation covariance lost definiteness");
  }
  const Matrix apc = A * P * C.transpose();
  const Matrix next = A * P * A.transpose() - apc * llt.solve(apc.transpose()) + model.Q;
  return symmetrized(next);
}

Matrix solve_dare(const StateSpaceModel& model, const DareOptions& options) {
  // Stability is not required here: a non-detectable pair shows up as divergence.
  for (const auto& v : validate(model)) {
    if (v.code == ViolationCode::kDimensionMismatch || v.code == ViolationCode::kNonFiniteEntry) {
      throw Error(ErrorCode::kDimensionMismatch, "solve_dare: " + v.message);
    }
  }
  Matrix P = model.Q;
  double residual = 0.0;
  for (long it = 0; it < options.max_iter; ++it) {
    Matrix next = riccati_map(model, P);
    if (!next.allFinite()) break;
    residual = max_abs(next - P);
    if (residual <= options.tol * std::max(1.0, max_abs(P))) return P;
    P = std::move(next);
  }
  throw Error(ErrorCode::kNoConvergence,
              "DARE fixed point not reached after " + std::to_string(options.max_iter) +
                  " iterations (last residual " + text::format_double(residual) + ")");
}

SteadyStateFilter build_filter(const StateSpaceModel& model, const DareOptions& options) {
  Matrix P = solve_dare(model, options);
  const Matrix& C = model.C;
  Matrix sigma = symmetrized(C * P * C.transpose() + model.R);
  Matrix K = SpdFactor(sigma).solve(C * P).transpose();
  return SteadyStateFilter(model, std::move(P), std::move(K), std::move(sigma));
}

FilterState initial_state(const SteadyStateFilter& filter) {
  return FilterState{Vector::Zero(filter.model().n()), 0};
}

void advance(const SteadyStateFilter& filter, FilterState& state,
             const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& y, Vector& r) {
  const auto& mdl = filter.model();
  if (u.size() != mdl.m() || y.size() != mdl.p() || state.x_hat.size() != mdl.n()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "step: expected u of size " + std::to_string(mdl.m()) + " and y of size " +
                    std::to_string(mdl.p()) + ", got " + std::to_string(u.size()) + " and " +
                    std::to_string(y.size()));
  }
  if (!u.allFinite() || !y.allFinite()) {
    throw Error(ErrorCode::kNonFiniteInput, "step: non-finite measurement or input");
  }
  Vector x_pred = mdl.A * state.x_hat;
  if (mdl.m() > 0) x_pred.noalias() += mdl.B * u;
  r = y;
  r.noalias() -= mdl.C * x_pred;
  state.x_hat = x_pred;
  state.x_hat.noalias() += filter.K() * r;
  ++state.step_index;
}

std::pair<FilterState, Innovation> step(const SteadyStateFilter& filter, const FilterState& state,
                                        const Eigen::Ref<const Vector>& u,
                                        const Eigen::Ref<const Vector>& y) {
  FilterState next = state;
  Innovation innov;
  advance(filter, next, u, y, innov.r);
  innov.step_index = next.step_index;
  return {std::move(next), std::move(innov)};
}

}  // namespace itdt
