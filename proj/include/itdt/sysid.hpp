#pragma once

#include <vector>

#include "itdt/model.hpp"

namespace itdt {

/// Attack-free record used for identification. Row t of U / Y is sample t.
struct TrainingLog {
  std::vector<double> timestamps;  // seconds, strictly increasing
  Matrix U;                        // T x m (m may be 0)
  Matrix Y;                        // T x p

  Eigen::Index length() const { return Y.rows(); }
};

/// Throws Error(kInvalidArgument / kNonFiniteInput / kLengthMismatch) when
/// timestamps are not strictly increasing, sampling jitter exceeds 1% of the
/// median period, or any value is missing.
void check_training_log(const TrainingLog& log);

/// Block-Hankel data matrices with `horizon` block rows each and
/// T − 2·horizon + 1 columns. Column k of the past blocks stacks samples
/// k … k+i−1; the future blocks continue at k+i … k+2i−1.
struct HankelBlocks {
  Matrix past_u;
  Matrix future_u;
  Matrix past_y;
  Matrix future_y;
};

HankelBlocks build_hankel(const TrainingLog& log, int horizon);

struct OrderStrategy {
  enum class Kind { kMaxGapRatio, kEnergyThreshold, kFixed };
  Kind kind = Kind::kMaxGapRatio;
  double energy = 0.99;  // kEnergyThreshold: fraction of Σ s²
  int fixed = 0;         // kFixed

  static OrderStrategy max_gap_ratio() { return {}; }
  static OrderStrategy energy_threshold(double fraction) {
    return {Kind::kEnergyThreshold, fraction, 0};
  }
  static OrderStrategy fixed_order(int n) { return {Kind::kFixed, 0.99, n}; }
};

struct OrderSelection {
  int order = 0;
  bool low_confidence = false;
};

/// kMaxGapRatio: argmax_k s_k / s_{k+1} over k with s_k ≥ 1e-8·s_1, smallest
/// k on ties (ties flag low confidence). Throws Error(kDegenerateSpectrum)
/// when s_1 is below 1e-12.
OrderSelection select_order(const Eigen::Ref<const Vector>& singular_values,
                            const OrderStrategy& strategy);

struct LjungBoxReport {
  std::vector<int> lags;            // 1..L
  std::vector<double> statistic;    // Q(L) of the channel with the smallest p
  std::vector<double> p_value;      // min over channels
  Matrix channel_statistic;         // L x p
};

/// Per-channel Q(L) = T(T+2) Σ_{k≤L} ρ̂_k² / (T−k) with χ²(L) p-values.
LjungBoxReport ljung_box(const Eigen::Ref<const Matrix>& residuals, int max_lag);

struct IdentifyOptions {
  int horizon = 60;  // block rows i; 2·n_max by default
  int max_order = 30;
  OrderStrategy order;
  bool standardize = true;
  int ljung_box_lags = 20;
  /// Singular values at or below factor·(√(p·i) + √((m+p)·i))/√j are treated
  /// as noise; 0 disables the floor.
  double noise_floor_factor = 1.5;
};

struct IdentificationResult {
  StateSpaceModel model;  // in standardized coordinates
  int order = 0;
  bool low_confidence = false;
  Vector hankel_singular_values;
  double noise_floor = 0.0;
  Vector fit_score;  // variance accounted for, per output, on the training data
  LjungBoxReport residual_diagnostics;
  ChannelScaling input_scaling;
  ChannelScaling output_scaling;
  Vector initial_state;
  bool stabilized = false;  // A was rescaled by 0.999/ρ(A)
};

/// Open-loop subspace identification (N4SID with unit weights):
///  1. LQ factorization of the stacked Hankel data [Uf; Up; Yp; Yf];
///  2. oblique projection of Yf onto past data along Uf, then SVD;
///  3. A, C from the shift invariance of the extended observability matrix;
///  4. B and x₀ by least squares on the simulated output;
///  5. Q, R from the joint covariance of state and output one-step residuals
///     of the estimated state sequence, mapped to the uncorrelated-noise form
///     whose steady-state filter reproduces the estimated innovation model.
IdentificationResult identify(const TrainingLog& log, const IdentifyOptions& options = {});

/// 1 − var(y − ŷ)/var(y) per output, ŷ simulated open loop from x₀ with
/// the first `burn_in` samples excluded.
Vector variance_accounted_for(const StateSpaceModel& model, const Eigen::Ref<const Matrix>& U,
                              const Eigen::Ref<const Matrix>& Y, const Vector& x0 = Vector(),
                              long burn_in = 0);

/// Applies `scaling` to each row of `data`.
Matrix scale_rows(const ChannelScaling& scaling, const Eigen::Ref<const Matrix>& data);

}  // namespace itdt
