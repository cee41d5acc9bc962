#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "itdt/numerics.hpp"

namespace itdt {

/// Point-wise (per step, no segment adjustment) confusion-matrix metrics.
struct PointMetrics {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;  // 0 when no alarms were raised
  double recall = 0.0;     // 0 when there are no positive labels
  double f1 = 0.0;
  double false_alarm_rate = 0.0;  // FP / (FP + TN)
};

/// `scored` masks the steps that count; empty means every step. Steps without
/// an emitted score are excluded from every denominator.
PointMetrics point_metrics(std::span<const std::uint8_t> alarms,
                           std::span<const std::uint8_t> labels,
                           std::span<const std::uint8_t> scored = {});

/// Half-open step range [start, end).
struct Segment {
  long start = 0;
  long end = 0;
};

/// Maximal runs of true labels.
std::vector<Segment> label_segments(std::span<const std::uint8_t> labels);

struct SegmentDelay {
  int segment_id = 0;
  long delay_steps = 0;
  double delay_seconds = 0.0;
  bool detected = false;
};

/// First in-segment alarm relative to each segment's onset.
std::vector<SegmentDelay> detection_delay(std::span<const std::uint8_t> alarms,
                                          std::span<const Segment> segments,
                                          double sample_period);

/// Mean over detected segments; nullopt when none was detected.
std::optional<double> mean_delay_seconds(std::span<const SegmentDelay> delays);

/// K contiguous, order-preserving ranges covering [0, T); the first T mod K
/// folds get one extra element.
std::vector<Segment> chronological_folds(long length, long k);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W−)
  double p_value = 1.0;    // two-sided
  long pairs_used = 0;
  bool exact = false;
};

/// Paired two-sided signed-rank test. Zero differences are dropped, ties get
/// mid-ranks; exact null distribution for ≤ 12 pairs, otherwise the normal
/// approximation with continuity and tie corrections.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

struct MardiaResult {
  double skewness = 0.0;       // b_{1,p}
  double kurtosis = 0.0;       // b_{2,p}
  double skewness_stat = 0.0;  // T·b1/6, χ² with p(p+1)(p+2)/6 dof
  double kurtosis_stat = 0.0;  // standardized b2
  double p_skew = 1.0;
  double p_kurt = 1.0;
};

/// Mardia's multivariate normality test on the rows of `samples` (T x p).
MardiaResult mardia_test(const Eigen::Ref<const Matrix>& samples);

struct DetectionReport {
  PointMetrics metrics;
  std::vector<SegmentDelay> delays;
  std::optional<double> mean_delay_seconds;
  double segment_recall = 0.0;  // fraction of segments with ≥ 1 alarm
  std::vector<double> fold_f1;
};

DetectionReport make_report(std::span<const std::uint8_t> alarms,
                            std::span<const std::uint8_t> labels,
                            std::span<const std::uint8_t> scored, double sample_period,
                            long folds = 0);

}  // namespace itdt
