#include "itdt/detector.hpp"

#include <cmath>
#include <string>

#include "itdt/error.hpp"
#include "text_util.hpp"

namespace itdt {

ReferenceDistribution::ReferenceDistribution(Matrix sigma)
    : sigma_(std::move(sigma)), factor_(sigma_), sigma_inv_(factor_.inverse()) {
  if (!is_symmetric(sigma_)) {
    throw Error(ErrorCode::kInvalidArgument, "reference covariance is not symmetric");
  }
}

ResidualWindow::ResidualWindow(Eigen::Index capacity, Eigen::Index dim)
    : buffer_(Matrix::Zero(dim, capacity)),
      sum_(Vector::Zero(dim)),
      outer_(Matrix::Zero(dim, dim)) {
  if (capacity < 1 || dim < 1) {
    throw Error(ErrorCode::kInvalidArgument, "window capacity and dimension must be positive");
  }
}

void ResidualWindow::push(const Eigen::Ref<const Vector>& r) {
  if (r.size() != dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "window push: expected dimension " +
                                                   std::to_string(dim()) + ", got " +
                                                   std::to_string(r.size()));
  }
  if (!r.allFinite()) throw Error(ErrorCode::kNonFiniteInput, "window push: non-finite residual");
  if (full()) {
    auto old = buffer_.col(head_);
    sum_ -= old;
    outer_.noalias() -= old * old.transpose();
  } else {
    ++size_;
  }
  buffer_.col(head_) = r;
  sum_ += r;
  outer_.noalias() += r * r.transpose();
  head_ = (head_ + 1) % capacity();
  if (++since_refresh_ >= kRefreshInterval) recompute();
}

Vector ResidualWindow::at(Eigen::Index i) const {
  const Eigen::Index oldest = full() ? head_ : 0;
  return buffer_.col((oldest + i) % capacity());
}

void ResidualWindow::recompute() {
  sum_.setZero();
  outer_.setZero();
  for (Eigen::Index i = 0; i < size_; ++i) {
    const Vector v = at(i);
    sum_ += v;
    outer_.noalias() += v * v.transpose();
  }
  since_refresh_ = 0;
}

WindowStats window_stats(const ResidualWindow& window) {
  if (!window.full()) {
    throw Error(ErrorCode::kWindowNotFull, "window holds " + std::to_string(window.size()) +
                                               " of " + std::to_string(window.capacity()));
  }
  const double w = static_cast<double>(window.capacity());
  WindowStats s;
  s.mean = window.running_sum() / w;
  s.covariance = window.running_outer_sum() / w;
  s.covariance.noalias() -= s.mean * s.mean.transpose();
  return s;
}

Matrix regularize(const Eigen::Ref<const Matrix>& sigma_hat, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must be positive");
  Matrix out = sigma_hat;
  out.diagonal().array() += epsilon;
  Eigen::LLT<Matrix> llt(out);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError(-1, "regularized window covariance",
                                   ErrorCode::kStillNotPositiveDefinite);
  }
  return out;
}

double kl_divergence_unclamped(const Eigen::Ref<const Vector>& mu_hat,
                               const Eigen::Ref<const Matrix>& sigma_hat,
                               const ReferenceDistribution& ref) {
  const auto p = ref.p();
  if (mu_hat.size() != p || sigma_hat.rows() != p || sigma_hat.cols() != p) {
    throw Error(ErrorCode::kDimensionMismatch, "kl_divergence: dimension mismatch");
  }
  Eigen::LLT<Matrix> llt(sigma_hat);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError(-1, "kl_divergence: window covariance");
  }
  const double log_det_hat = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  if (!std::isfinite(log_det_hat)) {
    throw NotPositiveDefiniteError(-1, "kl_divergence: window covariance");
  }
  const double trace = ref.sigma_inverse().cwiseProduct(sigma_hat).sum();
  const double mahalanobis = ref.factor().quad_form(mu_hat);
  return 0.5 * (trace - static_cast<double>(p) + mahalanobis + ref.log_det() - log_det_hat);
}

KlScore kl_divergence(const Eigen::Ref<const Vector>& mu_hat,
                      const Eigen::Ref<const Matrix>& sigma_hat, const ReferenceDistribution& ref,
                      long step_index) {
  double value = kl_divergence_unclamped(mu_hat, sigma_hat, ref);
  if (value < 0.0) {
    if (value < -kKlNegativeSlack) {
      throw Error(ErrorCode::kInternalConsistency,
                  "negative KL divergence " + text::format_double(value));
    }
    value = 0.0;
  }
  return KlScore{value, step_index, true};
}

void DetectorConfig::check() const {
  if (window < 2) throw Error(ErrorCode::kInvalidArgument, "window must be at least 2");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must be positive");
  if (warmup < 0) throw Error(ErrorCode::kInvalidArgument, "warmup must be nonnegative");
  if (consecutive < 1) throw Error(ErrorCode::kInvalidArgument, "consecutive must be >= 1");
  if (std::isnan(tau)) throw Error(ErrorCode::kInvalidArgument, "tau is NaN");
}

DetectorState::DetectorState(const SteadyStateFilter& f, const DetectorConfig& config)
    : filter(initial_state(f)),
      window(config.window, f.model().p()),
      residual(Vector::Zero(f.model().p())),
      last_input(Vector::Zero(f.model().m())) {}

Decision process(const SteadyStateFilter& filter, const ReferenceDistribution& ref,
                 const DetectorConfig& config, DetectorState& state,
                 const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& y) {
  if (ref.p() != filter.model().p() || state.window.dim() != ref.p()) {
    throw Error(ErrorCode::kDimensionMismatch, "detector: reference and filter disagree on p");
  }
  if (u.size() != state.last_input.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "input has wrong dimension");
  }
  if (!all_finite(u)) throw Error(ErrorCode::kNonFiniteInput, "input contains NaN or Inf");
  advance(filter, state.filter, state.last_input, y, state.residual);
  state.last_input = u;
  ++state.steps;
  Decision out;
  if (state.steps <= config.warmup) return out;
  state.window.push(state.residual);
  if (!state.window.full()) return out;

  WindowStats stats = window_stats(state.window);
  stats.covariance.diagonal().array() += config.epsilon;
  KlScore score;
  try {
    score = kl_divergence(stats.mean, stats.covariance, ref, state.filter.step_index);
  } catch (const NotPositiveDefiniteError& e) {
    throw NotPositiveDefiniteError(e.pivot(), "regularized window covariance",
                                   ErrorCode::kStillNotPositiveDefinite);
  }
  out.score = score;
  if (score.value > config.tau) {
    ++state.crossing_run;
  } else {
    state.crossing_run = 0;
  }
  out.alarm = state.crossing_run >= config.consecutive;
  return out;
}

Detector::Detector(const SteadyStateFilter& filter, ReferenceDistribution ref,
                   DetectorConfig config)
    : filter_(filter), ref_(std::move(ref)), config_(config), state_(filter, config_) {
  config_.check();
  if (ref_.p() != filter.model().p()) {
    throw Error(ErrorCode::kDimensionMismatch, "reference dimension does not match filter");
  }
}

}  // namespace itdt
