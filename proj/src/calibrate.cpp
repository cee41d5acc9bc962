#include "itdt/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "itdt/error.hpp"
#include "itdt/eval.hpp"

namespace itdt {

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "alpha must lie in (0, 1)");
  }
}

// Smallest k with k / M ≥ 1 − α, tolerant of rounding in (1 − α)·M.
std::size_t order_statistic_rank(std::size_t m, double alpha) {
  const double target = (1.0 - alpha) * static_cast<double>(m);
  auto k = static_cast<long>(std::ceil(target - 1e-9 * static_cast<double>(m)));
  k = std::clamp(k, 1L, static_cast<long>(m));
  return static_cast<std::size_t>(k);
}

double tau_of_sorted(const std::vector<double>& sorted, double alpha) {
  return sorted[order_statistic_rank(sorted.size(), alpha) - 1];
}

// Linear interpolation between order statistics (Hyndman-Fan type 7).
double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> checked_sorted(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::kEmptySet, "no calibration scores");
  std::vector<double> sorted(scores.begin(), scores.end());
  for (double s : sorted) {
    if (!std::isfinite(s)) throw Error(ErrorCode::kNonFiniteInput, "non-finite calibration score");
  }
  std::sort(sorted.begin(), sorted.end());
  return sorted;
}

}  // namespace

Threshold fit_threshold(std::span<const double> scores, double alpha) {
  check_alpha(alpha);
  const auto sorted = checked_sorted(scores);
  return Threshold{tau_of_sorted(sorted, alpha), alpha, static_cast<long>(sorted.size()),
                   std::nullopt};
}

std::vector<double> bootstrap_replicates(std::span<const double> scores, double alpha,
                                         int iterations, std::uint64_t seed) {
  check_alpha(alpha);
  if (iterations < 1) {
    throw Error(ErrorCode::kInvalidIterations, "bootstrap needs at least one iteration");
  }
  checked_sorted(scores);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, scores.size() - 1);
  std::vector<double> taus;
  taus.reserve(static_cast<std::size_t>(iterations));
  std::vector<double> resample(scores.size());
  for (int it = 0; it < iterations; ++it) {
    for (auto& s : resample) s = scores[pick(rng)];
    std::sort(resample.begin(), resample.end());
    taus.push_back(tau_of_sorted(resample, alpha));
  }
  return taus;
}

Threshold bootstrap_threshold(std::span<const double> scores, double alpha, int iterations,
                              std::uint64_t seed) {
  if (iterations < 1) {
    throw Error(ErrorCode::kInvalidIterations, "bootstrap needs at least one iteration");
  }
  Threshold th = fit_threshold(scores, alpha);
  auto taus = bootstrap_replicates(scores, alpha, iterations, seed);
  std::sort(taus.begin(), taus.end());
  th.ci95 = std::make_pair(percentile(taus, 0.025), percentile(taus, 0.975));
  return th;
}

Matrix filter_residuals(const SteadyStateFilter& filter, const Stream& stream) {
  const auto t_len = stream.length();
  if (stream.U.rows() != t_len) {
    throw Error(ErrorCode::kLengthMismatch, "stream U and Y differ in length");
  }
  Matrix out(t_len, filter.model().p());
  FilterState state = initial_state(filter);
  Vector r;
  Vector u_prev = Vector::Zero(filter.model().m());
  for (Eigen::Index t = 0; t < t_len; ++t) {
    advance(filter, state, u_prev, stream.Y.row(t).transpose(), r);
    out.row(t) = r.transpose();
    u_prev = stream.U.row(t).transpose();
  }
  return out;
}

Matrix empirical_residual_covariance(const SteadyStateFilter& filter, const Stream& stream,
                                     int warmup) {
  const Matrix res = filter_residuals(filter, stream);
  const Eigen::Index used = res.rows() - warmup;
  if (warmup < 0 || used < 2) {
    throw Error(ErrorCode::kInsufficientData, "too few residuals after warm-up");
  }
  const auto tail = res.bottomRows(used);
  const Vector mean = tail.colwise().mean();
  const Matrix centered = tail.rowwise() - mean.transpose();
  return symmetrized(centered.transpose() * centered / static_cast<double>(used));
}

ReferenceDistribution make_reference(const SteadyStateFilter& filter, const Stream& calibration,
                                     ReferenceKind kind, int warmup) {
  if (kind == ReferenceKind::kTheoretical) return ReferenceDistribution(filter.sigma());
  return ReferenceDistribution(empirical_residual_covariance(filter, calibration, warmup));
}

std::vector<double> ScoredStream::emitted() const {
  std::vector<double> out;
  for (double v : kl) {
    if (v == v) out.push_back(v);
  }
  return out;
}

ScoredStream score_stream(const SteadyStateFilter& filter, const ReferenceDistribution& ref,
                          const DetectorConfig& config, const Stream& stream) {
  config.check();
  const auto t_len = stream.length();
  if (stream.U.rows() != t_len) {
    throw Error(ErrorCode::kLengthMismatch, "stream U and Y differ in length");
  }
  ScoredStream out;
  out.kl.assign(static_cast<std::size_t>(t_len), std::numeric_limits<double>::quiet_NaN());
  out.alarm.assign(static_cast<std::size_t>(t_len), 0);
  DetectorState state(filter, config);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const Decision d =
        process(filter, ref, config, state, stream.U.row(t).transpose(), stream.Y.row(t).transpose());
    if (d.score) out.kl[static_cast<std::size_t>(t)] = d.score->value;
    out.alarm[static_cast<std::size_t>(t)] = d.alarm ? 1 : 0;
  }
  return out;
}

Calibration calibrate(const SteadyStateFilter& filter, const Stream& clean,
                      const DetectorConfig& config, double alpha, ReferenceKind kind,
                      int bootstrap_iterations, std::uint64_t seed) {
  check_alpha(alpha);
  ReferenceDistribution ref = make_reference(filter, clean, kind, config.warmup);
  DetectorConfig scoring = config;
  scoring.tau = std::numeric_limits<double>::infinity();
  const auto scores = score_stream(filter, ref, scoring, clean).emitted();
  Threshold th = bootstrap_iterations > 0
                     ? bootstrap_threshold(scores, alpha, bootstrap_iterations, seed)
                     : fit_threshold(scores, alpha);
  return Calibration{std::move(ref), th};
}

SweepResult sweep_window(const SteadyStateFilter& filter, const Stream& clean,
                         const Stream& validation, std::span<const std::uint8_t> labels,
                         std::span<const int> candidates, double alpha, double epsilon,
                         int warmup, ReferenceKind kind) {
  if (candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "no window candidates");
  if (static_cast<Eigen::Index>(labels.size()) != validation.length()) {
    throw Error(ErrorCode::kLengthMismatch, "labels do not match validation length");
  }
  std::vector<int> windows(candidates.begin(), candidates.end());
  std::sort(windows.begin(), windows.end());
  windows.erase(std::unique(windows.begin(), windows.end()), windows.end());

  SweepResult result;
  double best = -1.0;
  for (int w : windows) {
    DetectorConfig cfg;
    cfg.window = w;
    cfg.epsilon = epsilon;
    cfg.warmup = warmup;
    const Calibration cal = calibrate(filter, clean, cfg, alpha, kind);
    cfg.tau = cal.threshold.tau;
    const ScoredStream scored = score_stream(filter, cal.reference, cfg, validation);
    std::vector<std::uint8_t> mask(scored.kl.size());
    for (std::size_t t = 0; t < mask.size(); ++t) mask[t] = scored.scored(t) ? 1 : 0;
    const double f1 = point_metrics(scored.alarm, labels, mask).f1;
    result.rows.push_back({w, cal.threshold.tau, f1});
    if (f1 > best) {
      best = f1;
      result.recommended = w;
    }
  }
  return result;
}

}  // namespace itdt
