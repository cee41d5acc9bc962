#pragma once

#include <limits>
#include <optional>

#include "itdt/kalman.hpp"

namespace itdt {

/// Attack-free residual law N(0, Sigma). Sigma⁻¹ is cached so the per-step
/// trace term costs O(p²).
class ReferenceDistribution {
 public:
  explicit ReferenceDistribution(Matrix sigma);

  Eigen::Index p() const { return sigma_.rows(); }
  const Matrix& sigma() const { return sigma_; }
  const Matrix& sigma_inverse() const { return sigma_inv_; }
  const SpdFactor& factor() const { return factor_; }
  double log_det() const { return factor_.log_det(); }

 private:
  Matrix sigma_;
  SpdFactor factor_;
  Matrix sigma_inv_;
};

/// Fixed-capacity ring buffer of residual vectors with running first and
/// second moments. Sums are rebuilt from the buffer every kRefreshInterval
/// pushes to bound floating-point drift.
class ResidualWindow {
 public:
  static constexpr long kRefreshInterval = 4096;

  ResidualWindow(Eigen::Index capacity, Eigen::Index dim);

  void push(const Eigen::Ref<const Vector>& r);

  Eigen::Index capacity() const { return buffer_.cols(); }
  Eigen::Index dim() const { return buffer_.rows(); }
  Eigen::Index size() const { return size_; }
  bool full() const { return size_ == capacity(); }
  const Vector& running_sum() const { return sum_; }
  const Matrix& running_outer_sum() const { return outer_; }
  /// i-th buffered vector, oldest first.
  Vector at(Eigen::Index i) const;

  /// Rebuilds both running sums from the buffered vectors.
  void recompute();

 private:
  Matrix buffer_;  // dim x capacity, column ring
  Eigen::Index head_ = 0;  // next write slot
  Eigen::Index size_ = 0;
  Vector sum_;
  Matrix outer_;
  long since_refresh_ = 0;
};

struct WindowStats {
  Vector mean;
  Matrix covariance;  // maximum-likelihood (divisor W)
};

/// Throws Error(kWindowNotFull) until the window holds W vectors.
WindowStats window_stats(const ResidualWindow& window);

/// sigma_hat + epsilon·I, verified by Cholesky. Throws
/// NotPositiveDefiniteError(kStillNotPositiveDefinite) otherwise.
Matrix regularize(const Eigen::Ref<const Matrix>& sigma_hat, double epsilon);

struct KlScore {
  double value = 0.0;
  long step_index = 0;
  bool window_full = true;
};

/// Slack below zero that is treated as rounding and clamped.
inline constexpr double kKlNegativeSlack = 1e-9;

/// ½[tr(Σ⁻¹Σ̂) − p + μ̂ᵀΣ⁻¹μ̂ + ln det Σ − ln det Σ̂] before clamping.
double kl_divergence_unclamped(const Eigen::Ref<const Vector>& mu_hat,
                               const Eigen::Ref<const Matrix>& sigma_hat,
                               const ReferenceDistribution& ref);

/// Closed-form KL(N(μ̂, Σ̂) ‖ N(0, Σ)). Values in [−1e-9, 0) clamp to 0;
/// anything lower raises Error(kInternalConsistency).
KlScore kl_divergence(const Eigen::Ref<const Vector>& mu_hat,
                      const Eigen::Ref<const Matrix>& sigma_hat, const ReferenceDistribution& ref,
                      long step_index = 0);

struct DetectorConfig {
  int window = 60;
  double epsilon = 1e-4;
  double tau = std::numeric_limits<double>::infinity();
  /// Innovations from the first `warmup` steps never enter the window.
  int warmup = 0;
  /// Alarm only after this many consecutive threshold crossings (1 = raw).
  int consecutive = 1;

  /// Throws Error(kInvalidArgument) on bad settings.
  void check() const;
};

/// Per-stream mutable state: filter estimate, residual window, counters.
struct DetectorState {
  FilterState filter;
  ResidualWindow window;
  long steps = 0;
  int crossing_run = 0;
  Vector residual;  // last innovation
  Vector last_input;  // u from the previous sample, drives the next prediction

  DetectorState(const SteadyStateFilter& filter, const DetectorConfig& config);
};

struct Decision {
  std::optional<KlScore> score;
  bool alarm = false;
};

/// One iteration of the streaming loop: filter step, window update, and, once
/// the window is full, statistics → regularize → KL → threshold test.
/// `u` and `y` are one sample; y is predicted from the previous sample's u.
Decision process(const SteadyStateFilter& filter, const ReferenceDistribution& ref,
                 const DetectorConfig& config, DetectorState& state,
                 const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& y);

/// Convenience owner of one stream's detector (holds its own filter copy).
class Detector {
 public:
  Detector(const SteadyStateFilter& filter, ReferenceDistribution ref, DetectorConfig config);

  Decision process(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& y) {
    return itdt::process(filter_, ref_, config_, state_, u, y);
  }

  const DetectorState& state() const { return state_; }
  const SteadyStateFilter& filter() const { return filter_; }
  const DetectorConfig& config() const { return config_; }
  const ReferenceDistribution& reference() const { return ref_; }

 private:
  SteadyStateFilter filter_;
  ReferenceDistribution ref_;
  DetectorConfig config_;
  DetectorState state_;
};

}  // namespace itdt
