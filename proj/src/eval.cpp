#include "itdt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "itdt/error.hpp"
#include "stats_util.hpp"

namespace itdt {

namespace {

double ratio(long num, long den) { return den > 0 ? static_cast<double>(num) / den : 0.0; }

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

PointMetrics point_metrics(std::span<const std::uint8_t> alarms,
                           std::span<const std::uint8_t> labels,
                           std::span<const std::uint8_t> scored) {
  if (alarms.size() != labels.size() || (!scored.empty() && scored.size() != labels.size())) {
    throw Error(ErrorCode::kLengthMismatch,
                "alarms (" + std::to_string(alarms.size()) + ") and labels (" +
                    std::to_string(labels.size()) + ") differ in length");
  }
  PointMetrics m;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (!scored.empty() && !scored[t]) continue;
    const bool a = alarms[t] != 0;
    const bool l = labels[t] != 0;
    if (a && l) ++m.tp;
    else if (a) ++m.fp;
    else if (l) ++m.fn;
    else ++m.tn;
  }
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = harmonic(m.precision, m.recall);
  m.false_alarm_rate = ratio(m.fp, m.fp + m.tn);
  return m;
}

std::vector<Segment> label_segments(std::span<const std::uint8_t> labels) {
  std::vector<Segment> out;
  const long n = static_cast<long>(labels.size());
  long t = 0;
  while (t < n) {
    if (!labels[t]) {
      ++t;
      continue;
    }
    long e = t;
    while (e < n && labels[e]) ++e;
    out.push_back({t, e});
    t = e;
  }
  return out;
}

std::vector<SegmentDelay> detection_delay(std::span<const std::uint8_t> alarms,
                                          std::span<const Segment> segments,
                                          double sample_period) {
  std::vector<SegmentDelay> out;
  out.reserve(segments.size());
  const long n = static_cast<long>(alarms.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    SegmentDelay d;
    d.segment_id = static_cast<int>(i);
    for (long t = std::max(0L, seg.start); t < std::min(seg.end, n); ++t) {
      if (alarms[t]) {
        d.detected = true;
        d.delay_steps = t - seg.start;
        d.delay_seconds = static_cast<double>(d.delay_steps) * sample_period;
        break;
      }
    }
    out.push_back(d);
  }
  return out;
}

std::optional<double> mean_delay_seconds(std::span<const SegmentDelay> delays) {
  double sum = 0.0;
  long count = 0;
  for (const auto& d : delays) {
    if (!d.detected) continue;
    sum += d.delay_seconds;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

std::vector<Segment> chronological_folds(long length, long k) {
  if (k < 1 || k > length) {
    throw Error(ErrorCode::kInvalidK, "K=" + std::to_string(k) + " for length " +
                                          std::to_string(length));
  }
  std::vector<Segment> folds;
  const long base = length / k;
  const long extra = length % k;
  long start = 0;
  for (long i = 0; i < k; ++i) {
    const long size = base + (i < extra ? 1 : 0);
    folds.push_back({start, start + size});
    start += size;
  }
  return folds;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kLengthMismatch, "wilcoxon: paired samples differ in length");
  }
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) throw Error(ErrorCode::kAllZeroDifferences, "wilcoxon: all differences are zero");
  const long n = static_cast<long>(diffs.size());
  if (n < 5) {
    throw Error(ErrorCode::kTooFewPairs,
                "wilcoxon: " + std::to_string(n) + " nonzero differences, need at least 5");
  }

  // Doubled mid-ranks keep everything integral.
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](long i, long j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (long i = 0; i < n;) {
    long j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const long mid2 = (i + 1) + (j + 1);  // 2 × average of ranks i+1..j+1
    for (long k = i; k <= j; ++k) rank2[order[k]] = mid2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long plus2 = 0, total2 = 0;
  for (long i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0) plus2 += rank2[i];
  }
  const long stat2 = std::min(plus2, total2 - plus2);

  WilcoxonResult res;
  res.statistic = 0.5 * static_cast<double>(stat2);
  res.pairs_used = n;
  if (n <= 12) {
    // Null distribution of doubled W+ by dynamic programming over signs.
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    for (long i = 0; i < n; ++i) {
      for (long s = total2; s >= rank2[i]; --s) count[s] += count[s - rank2[i]];
    }
    double hits = 0.0;
    for (long s = 0; s <= total2; ++s) {
      if (std::min(s, total2 - s) <= stat2) hits += count[s];
    }
    res.p_value = std::min(1.0, hits / std::ldexp(1.0, static_cast<int>(n)));
    res.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double w_plus = 0.5 * static_cast<double>(plus2);
    const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * stats::normal_sf(z));
  }
  return res;
}

MardiaResult mardia_test(const Eigen::Ref<const Matrix>& samples) {
  const Eigen::Index t = samples.rows();
  const Eigen::Index p = samples.cols();
  if (p < 1 || t <= p + 1) {
    throw Error(ErrorCode::kInsufficientData, "mardia: need T > p + 1, got T=" +
                                                  std::to_string(t) + ", p=" + std::to_string(p));
  }
  const Vector mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(t);
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    cov.diagonal().array() += 1e-10;
    llt.compute(cov);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::kNumericalFailure, "mardia: singular sample covariance");
    }
  }
  // Whitened rows z_i = L⁻¹ d_i, so d_iᵀ S⁻¹ d_j = z_i · z_j.
  const Matrix z = llt.matrixL().solve(centered.transpose()).transpose();

  // Σ_ij (z_i·z_j)³ = Σ_abc (Σ_i z_ia z_ib z_ic)².
  double sum_cubed = 0.0;
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = 0; b < p; ++b) {
      const Eigen::ArrayXd ab = z.col(a).array() * z.col(b).array();
      for (Eigen::Index c = 0; c < p; ++c) {
        const double m = (ab * z.col(c).array()).sum();
        sum_cubed += m * m;
      }
    }
  }
  const double tt = static_cast<double>(t);
  const double pp = static_cast<double>(p);
  MardiaResult r;
  r.skewness = sum_cubed / (tt * tt);
  r.kurtosis = z.rowwise().squaredNorm().array().square().sum() / tt;
  r.skewness_stat = tt * r.skewness / 6.0;
  const double dof = pp * (pp + 1.0) * (pp + 2.0) / 6.0;
  r.p_skew = stats::chi_squared_sf(r.skewness_stat, dof);
  r.kurtosis_stat = (r.kurtosis - pp * (pp + 2.0)) / std::sqrt(8.0 * pp * (pp + 2.0) / tt);
  r.p_kurt = std::min(1.0, 2.0 * stats::normal_sf(std::abs(r.kurtosis_stat)));
  return r;
}

DetectionReport make_report(std::span<const std::uint8_t> alarms,
                            std::span<const std::uint8_t> labels,
                            std::span<const std::uint8_t> scored, double sample_period,
                            long folds) {
  DetectionReport rep;
  rep.metrics = point_metrics(alarms, labels, scored);
  const auto segments = label_segments(labels);
  rep.delays = detection_delay(alarms, segments, sample_period);
  rep.mean_delay_seconds = mean_delay_seconds(rep.delays);
  long hit = 0;
  for (const auto& d : rep.delays) hit += d.detected ? 1 : 0;
  rep.segment_recall = segments.empty() ? 0.0 : static_cast<double>(hit) / segments.size();
  if (folds > 0) {
    for (const auto& f : chronological_folds(static_cast<long>(labels.size()), folds)) {
      const auto len = static_cast<std::size_t>(f.end - f.start);
      auto sub = [&](std::span<const std::uint8_t> s) {
        return s.empty() ? s : s.subspan(static_cast<std::size_t>(f.start), len);
      };
      rep.fold_f1.push_back(point_metrics(sub(alarms), sub(labels), sub(scored)).f1);
    }
  }
  return rep;
}

}  // namespace itdt
