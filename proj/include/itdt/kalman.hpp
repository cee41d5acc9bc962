#pragma once

#include <utility>

#include "itdt/model.hpp"

namespace itdt {

struct DareOptions {
  /// Stop once ‖F(P) − P‖_max ≤ tol·max(1, ‖P‖_max).
  double tol = 1e-10;
  long max_iter = 100000;
};

/// One application of the filter Riccati map
///   F(P) = A P Aᵀ − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ + Q.
Matrix riccati_map(const StateSpaceModel& model, const Eigen::Ref<const Matrix>& P);

/// Steady-state a-priori error covariance by fixed-point iteration from P₀ = Q.
/// Throws Error(kNoConvergence) when the iteration stalls or diverges.
Matrix solve_dare(const StateSpaceModel& model, const DareOptions& options = {});

SteadyStateFilter build_filter(const StateSpaceModel& model, const DareOptions& options = {});

struct FilterState {
  Vector x_hat;  // posterior estimate x̂_{t|t}
  long step_index = 0;
};

struct Innovation {
  Vector r;
  long step_index = 0;
};

/// Zero state in model coordinates.
FilterState initial_state(const SteadyStateFilter& filter);

/// Predict / innovate / correct:
///   x̂⁻ = A x̂ + B u,  r = y − C x̂⁻,  x̂ ← x̂⁻ + K r.
std::pair<FilterState, Innovation> step(const SteadyStateFilter& filter, const FilterState& state,
                                        const Eigen::Ref<const Vector>& u,
                                        const Eigen::Ref<const Vector>& y);

/// In-place form of `step` for streaming loops; writes the innovation to `r`.
void advance(const SteadyStateFilter& filter, FilterState& state,
             const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& y, Vector& r);

}  // namespace itdt
