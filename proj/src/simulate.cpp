#include "itdt/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "itdt/error.hpp"
#include "itdt/kalman.hpp"

namespace itdt {

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  }
  return m;
}

Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm > 0.0) m.row(i) /= norm;
  }
  return m;
}

Matrix correlation(const Matrix& x) {
  const Vector mean = x.colwise().mean();
  const Matrix c = x.rowwise() - mean.transpose();
  Matrix cov = c.transpose() * c / static_cast<double>(std::max<Eigen::Index>(1, x.rows()));
  const Vector sd = cov.diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < cov.rows(); ++i) {
    for (Eigen::Index j = 0; j < cov.cols(); ++j) {
      const double d = sd(i) * sd(j);
      cov(i, j) = d > 0.0 ? cov(i, j) / d : 0.0;
    }
  }
  return cov;
}

void check_channels(std::span<const int> channels, Eigen::Index p) {
  for (int c : channels) {
    if (c < 0 || c >= p) {
      throw Error(ErrorCode::kInvalidArgument, "attack channel " + std::to_string(c) +
                                                   " outside [0, " + std::to_string(p) + ")");
    }
  }
}

}  // namespace

StateSpaceModel gen_plant(const PlantSpec& spec) {
  if (spec.n < 1 || spec.p < 1 || spec.m < 0) {
    throw Error(ErrorCode::kInvalidArgument, "plant dimensions must be n, p >= 1 and m >= 0");
  }
  if (!(spec.spectral_radius > 0.0 && spec.spectral_radius < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "spectral radius must lie in (0, 1)");
  }
  if (!(spec.process_noise > 0.0 && spec.measurement_noise > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "noise scales must be positive");
  }
  std::mt19937_64 rng(spec.seed);
  StateSpaceModel m;
  m.A = gaussian(spec.n, spec.n, rng);
  double rho = spectral_radius(m.A);
  while (rho < 1e-8) {  // nilpotent draw; try again
    m.A = gaussian(spec.n, spec.n, rng);
    rho = spectral_radius(m.A);
  }
  m.A *= spec.spectral_radius / rho;
  m.B = unit_rows(gaussian(spec.n, spec.m, rng));
  m.C = unit_rows(gaussian(spec.p, spec.n, rng));
  m.Q = spec.process_noise * Matrix::Identity(spec.n, spec.n);
  m.R = spec.measurement_noise * Matrix::Identity(spec.p, spec.p);
  return m;
}

Vector output_snr_db(const StateSpaceModel& model) {
  const Matrix& C = model.C;
  const Matrix xd = discrete_lyapunov(model.A, model.B * model.B.transpose());
  const Matrix xs = discrete_lyapunov(model.A, model.Q);
  const Vector signal = (C * xd * C.transpose()).diagonal();
  const Vector noise = (C * xs * C.transpose() + model.R).diagonal();
  return (10.0 * (signal.array() / noise.array()).log10()).matrix();
}

StateSpaceModel with_output_snr(const StateSpaceModel& model, double snr_db) {
  if (model.m() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "output SNR needs at least one input");
  }
  const double worst = output_snr_db(model).minCoeff();
  const double factor = std::pow(10.0, (worst - snr_db) / 10.0);
  StateSpaceModel out = model;
  out.Q *= factor;
  out.R *= factor;
  return out;
}

Vector innovation_sigma(const StateSpaceModel& model) {
  return build_filter(model).sigma().diagonal().cwiseSqrt();
}

double AttackScenario::ramp_value(long t) const {
  if (t < start || t >= end) return 0.0;
  double value = 0.0;
  long offset = t - start;
  for (const auto& st : stages) {
    const long span = std::min(offset, st.duration);
    value += st.slope / 100.0 * static_cast<double>(span);
    offset -= span;
    if (offset <= 0) break;
  }
  return value;
}

AttackScenario bias_injection(std::vector<int> channels, long start, long end, double magnitude) {
  AttackScenario s;
  s.kind = AttackKind::kBiasInjection;
  s.channels = std::move(channels);
  s.start = start;
  s.end = end;
  s.magnitude = magnitude;
  return s;
}

AttackScenario stealth_covariance_shift(std::vector<int> channels, long start, long end,
                                        Matrix mixing) {
  if (mixing.rows() != static_cast<Eigen::Index>(channels.size()) ||
      mixing.cols() != mixing.rows()) {
    throw Error(ErrorCode::kInvalidMixing, "mixing must be square over the selected channels");
  }
  AttackScenario s;
  s.kind = AttackKind::kStealthCovarianceShift;
  s.channels = std::move(channels);
  s.start = start;
  s.end = end;
  s.mixing = std::move(mixing);
  return s;
}

AttackScenario multi_stage_ramp(std::vector<int> channels, std::span<const RampStage> stages,
                                long start) {
  if (stages.empty()) throw Error(ErrorCode::kInvalidStages, "ramp needs at least one stage");
  long total = 0;
  for (const auto& st : stages) {
    if (st.duration <= 0) throw Error(ErrorCode::kInvalidStages, "stage durations must be > 0");
    if (!std::isfinite(st.slope)) throw Error(ErrorCode::kInvalidStages, "non-finite slope");
    total += st.duration;
  }
  AttackScenario s;
  s.kind = AttackKind::kMultiStageRamp;
  s.channels = std::move(channels);
  s.start = start;
  s.end = start + total;
  s.stages.assign(stages.begin(), stages.end());
  return s;
}

AttackScenario long_ramp_attack(std::vector<int> channels, long start) {
  // 0 → 1.5σ over 120 steps, → 2σ over the next 120, then hold for 240.
  const RampStage stages[] = {{120, 1.25}, {120, 0.5 / 1.2}, {240, 0.0}};
  return multi_stage_ramp(std::move(channels), stages, start);
}

Matrix correlating_mixing(double theta) {
  Matrix m(2, 2);
  m << std::cos(theta), std::sin(theta), std::sin(theta), std::cos(theta);
  return m;
}

Matrix rotation_mixing(double theta) {
  Matrix m(2, 2);
  m << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return m;
}

StealthInjection inject_stealth_covariance(const Eigen::Ref<const Matrix>& segment,
                                           const Eigen::Ref<const Matrix>& mixing,
                                           std::span<const int> channels,
                                           const Matrix& channel_cov) {
  const auto k = static_cast<Eigen::Index>(channels.size());
  if (mixing.rows() != k || mixing.cols() != k) {
    throw Error(ErrorCode::kInvalidMixing, "mixing must be square over the selected channels");
  }
  check_channels(channels, segment.cols());
  Matrix sel(segment.rows(), k);
  for (Eigen::Index j = 0; j < k; ++j) sel.col(j) = segment.col(channels[j]);

  Matrix s = channel_cov;
  if (s.size() == 0) {
    const Vector mean = sel.colwise().mean();
    const Matrix c = sel.rowwise() - mean.transpose();
    s = c.transpose() * c / static_cast<double>(std::max<Eigen::Index>(1, sel.rows()));
  }
  if (s.rows() != k || s.cols() != k) {
    throw Error(ErrorCode::kInvalidMixing, "channel covariance has the wrong shape");
  }
  const Vector before = s.diagonal();
  const Vector after = (mixing * s * mixing.transpose()).diagonal();
  for (Eigen::Index j = 0; j < k; ++j) {
    if (std::abs(after(j) - before(j)) > 0.02 * before(j)) {
      throw Error(ErrorCode::kInvalidMixing,
                  "mixing changes the variance of channel " + std::to_string(channels[j]));
    }
  }

  StealthInjection out;
  out.attacked = segment;
  const Matrix mixed = sel * mixing.transpose();
  for (Eigen::Index j = 0; j < k; ++j) out.attacked.col(channels[j]) = mixed.col(j);

  if (segment.rows() > 1) {
    const Matrix before_corr = correlation(segment);
    const Matrix after_corr = correlation(out.attacked);
    for (int c : channels) {
      for (Eigen::Index other = 0; other < segment.cols(); ++other) {
        if (other == c) continue;
        out.max_correlation_change = std::max(
            out.max_correlation_change, std::abs(after_corr(c, other) - before_corr(c, other)));
      }
    }
  }
  return out;
}

LabeledRun simulate_run(const StateSpaceModel& model, long length, InputPolicy policy,
                        std::span<const AttackScenario> scenarios, std::uint64_t seed,
                        const Vector& channel_sigma) {
  if (!passes(validate(model))) {
    throw Error(ErrorCode::kInvalidArgument, "simulate_run: model fails validation");
  }
  const auto n = model.n(), m = model.m(), p = model.p();
  for (const auto& sc : scenarios) {
    if (sc.kind == AttackKind::kNone) continue;
    if (!(0 <= sc.start && sc.start < sc.end && sc.end <= length)) {
      throw Error(ErrorCode::kInvalidArgument, "attack window must satisfy 0 <= start < end <= T");
    }
    check_channels(sc.channels, p);
  }
  Vector sigma = channel_sigma;
  bool need_sigma = false;
  for (const auto& sc : scenarios) {
    need_sigma |= sc.kind == AttackKind::kBiasInjection || sc.kind == AttackKind::kMultiStageRamp;
  }
  if (sigma.size() == 0 && need_sigma) sigma = innovation_sigma(model);
  if (need_sigma && sigma.size() != p) {
    throw Error(ErrorCode::kDimensionMismatch, "channel_sigma must have p entries");
  }

  const Matrix lq = Eigen::LLT<Matrix>(model.Q).matrixL();
  const Matrix lr = Eigen::LLT<Matrix>(model.R).matrixL();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto draw = [&](Eigen::Index k) {
    Vector v(k);
    for (Eigen::Index i = 0; i < k; ++i) v(i) = nd(rng);
    return v;
  };

  LabeledRun run;
  run.U = Matrix::Zero(length, m);
  run.X = Matrix::Zero(length, n);
  run.clean_y = Matrix::Zero(length, p);
  Matrix noise_v(length, p);
  Vector x = Vector::Zero(n);
  for (long t = 0; t < length; ++t) {
    Vector u = policy == InputPolicy::kExcitation ? draw(m) : Vector::Zero(m);
    const Vector w = lq * draw(n);
    const Vector v = lr * draw(p);
    run.U.row(t) = u.transpose();
    run.X.row(t) = x.transpose();
    noise_v.row(t) = v.transpose();
    run.clean_y.row(t) = (model.C * x + v).transpose();
    x = model.A * x + model.B * u + w;
  }

  run.Y = run.clean_y;
  run.labels.assign(static_cast<std::size_t>(length), 0);
  for (const auto& sc : scenarios) {
    if (sc.kind == AttackKind::kNone) continue;
    for (long t = sc.start; t < sc.end; ++t) run.labels[static_cast<std::size_t>(t)] = 1;
    const long len = sc.end - sc.start;
    switch (sc.kind) {
      case AttackKind::kBiasInjection:
        for (int c : sc.channels) {
          run.Y.col(c).segment(sc.start, len).array() += sc.magnitude * sigma(c);
        }
        break;
      case AttackKind::kMultiStageRamp:
        for (long t = sc.start; t < sc.end; ++t) {
          const double a = sc.ramp_value(t);
          for (int c : sc.channels) run.Y(t, c) += a * sigma(c);
        }
        break;
      case AttackKind::kStealthCovarianceShift: {
        const auto k = static_cast<Eigen::Index>(sc.channels.size());
        Matrix rsel(k, k);
        for (Eigen::Index i = 0; i < k; ++i) {
          for (Eigen::Index j = 0; j < k; ++j) rsel(i, j) = model.R(sc.channels[i], sc.channels[j]);
        }
        const Matrix seg = noise_v.middleRows(sc.start, len);
        const auto inj = inject_stealth_covariance(seg, sc.mixing, sc.channels, rsel);
        run.Y.middleRows(sc.start, len) += inj.attacked - seg;
        break;
      }
      case AttackKind::kNone:
        break;
    }
  }
  return run;
}

}  // namespace itdt
