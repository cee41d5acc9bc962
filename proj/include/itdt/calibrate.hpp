#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "itdt/detector.hpp"

namespace itdt {

struct Threshold {
  double tau = 0.0;
  double alpha = 0.0;
  long samples = 0;
  std::optional<std::pair<double, double>> ci95;
};

/// Smallest score τ whose empirical CDF reaches 1 − α, i.e. the
/// ⌈(1−α)·M⌉-th order statistic.
Threshold fit_threshold(std::span<const double> scores, double alpha);

/// τ fitted on each of `iterations` resamples (with replacement).
std::vector<double> bootstrap_replicates(std::span<const double> scores, double alpha,
                                         int iterations, std::uint64_t seed);

/// Point estimate from the full set plus a 95% percentile interval from
/// `iterations` resamples. Deterministic for a given seed.
Threshold bootstrap_threshold(std::span<const double> scores, double alpha, int iterations = 100,
                              std::uint64_t seed = 0);

enum class ReferenceKind { kEmpirical, kTheoretical };

/// Time-major input/output record: row t holds u_t (resp. y_t).
struct Stream {
  Matrix U;  // T x m
  Matrix Y;  // T x p

  Eigen::Index length() const { return Y.rows(); }
};

/// Innovations of `filter` over the whole stream, T x p.
/// Row t of the result is y_t minus its prediction from samples before t.
Matrix filter_residuals(const SteadyStateFilter& filter, const Stream& stream);

/// Centered maximum-likelihood covariance of the innovations after `warmup`.
Matrix empirical_residual_covariance(const SteadyStateFilter& filter, const Stream& stream,
                                     int warmup);

ReferenceDistribution make_reference(const SteadyStateFilter& filter, const Stream& calibration,
                                     ReferenceKind kind, int warmup);

/// Per-step detector output over a stream. `kl[t]` is NaN where no score was
/// emitted (warm-up or window filling).
struct ScoredStream {
  std::vector<double> kl;
  std::vector<std::uint8_t> alarm;

  bool scored(std::size_t t) const { return kl[t] == kl[t]; }
  std::vector<double> emitted() const;
};

ScoredStream score_stream(const SteadyStateFilter& filter, const ReferenceDistribution& ref,
                          const DetectorConfig& config, const Stream& stream);

struct Calibration {
  ReferenceDistribution reference;
  Threshold threshold;
};

/// Fits the reference and τ* from one attack-free stream, scoring it with
/// exactly the warm-up, window and ε used online. `bootstrap_iterations` = 0
/// skips the confidence interval.
Calibration calibrate(const SteadyStateFilter& filter, const Stream& clean,
                      const DetectorConfig& config, double alpha, ReferenceKind kind,
                      int bootstrap_iterations = 0, std::uint64_t seed = 0);

struct SweepResult {
  std::vector<SweepRow> rows;  // sorted by window
  int recommended = 0;         // argmax F1, smallest W on ties
};

/// For each candidate W: recalibrate τ at fixed α on `clean`, score the
/// labeled `validation` stream and record point-wise F1.
SweepResult sweep_window(const SteadyStateFilter& filter, const Stream& clean,
                         const Stream& validation, std::span<const std::uint8_t> labels,
                         std::span<const int> candidates, double alpha, double epsilon,
                         int warmup, ReferenceKind kind);

}  // namespace itdt
