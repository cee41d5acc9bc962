#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "itdt/model.hpp"

namespace itdt {

struct PlantSpec {
  int n = 1;
  int m = 0;
  int p = 1;
  double spectral_radius = 0.5;
  double process_noise = 0.01;      // Q = process_noise · I
  double measurement_noise = 0.01;  // R = measurement_noise · I
  std::uint64_t seed = 0;
};

/// Random stable plant: Gaussian A rescaled to the requested spectral radius,
/// B and C with unit-norm rows, diagonal Q and R. Deterministic per seed.
StateSpaceModel gen_plant(const PlantSpec& spec);

/// Per-output ratio (in dB) of the input-driven output variance under unit
/// white inputs to the noise-driven output variance (process + measurement).
Vector output_snr_db(const StateSpaceModel& model);

/// Copy of `model` with Q and R scaled by a common factor so that the worst
/// output channel sits exactly at `snr_db`. Requires m > 0.
StateSpaceModel with_output_snr(const StateSpaceModel& model, double snr_db);

/// sqrt(diag(C P Cᵀ + R)) of the matched steady-state filter: the unit in
/// which attack magnitudes are expressed.
Vector innovation_sigma(const StateSpaceModel& model);

enum class AttackKind { kNone, kBiasInjection, kStealthCovarianceShift, kMultiStageRamp };

struct RampStage {
  long duration = 0;
  double slope = 0.0;  // channel σ per 100 steps
};

struct AttackScenario {
  AttackKind kind = AttackKind::kNone;
  std::vector<int> channels;
  long start = 0;
  long end = 0;  // exclusive
  double magnitude = 0.0;  // bias, in channel σ
  Matrix mixing;           // |channels| x |channels|, covariance shift
  std::vector<RampStage> stages;

  /// Ramp offset (in σ) at absolute step t; 0 outside [start, end).
  double ramp_value(long t) const;
};

AttackScenario bias_injection(std::vector<int> channels, long start, long end, double magnitude);

AttackScenario stealth_covariance_shift(std::vector<int> channels, long start, long end,
                                        Matrix mixing);

/// Continuous piecewise-linear ramp from 0; window length is the sum of stage
/// durations. Throws Error(kInvalidStages) on empty or non-positive stages.
AttackScenario multi_stage_ramp(std::vector<int> channels, std::span<const RampStage> stages,
                                long start = 0);

/// Synthetic stand-in for a long, slow multi-stage manipulation: two channels,
/// 480 steps, climbing to a 2σ peak in three stages and holding it.
AttackScenario long_ramp_attack(std::vector<int> channels, long start);

/// Symmetric two-channel mixing [[cos θ, sin θ], [sin θ, cos θ]]: keeps the
/// variance of two uncorrelated equal-variance channels and gives them
/// correlation sin 2θ.
Matrix correlating_mixing(double theta);

/// Plane rotation [[cos θ, −sin θ], [sin θ, cos θ]].
Matrix rotation_mixing(double theta);

struct StealthInjection {
  Matrix attacked;
  double max_correlation_change = 0.0;  // over pairs involving a mixed channel
};

/// Replaces the selected columns x_sel of every row by mixing · x_sel. Throws
/// Error(kInvalidMixing) unless diag(M S Mᵀ) stays within 2% of diag(S), where
/// S is `channel_cov` (|channels| x |channels|) when given, otherwise the
/// sample covariance of the selected columns.
StealthInjection inject_stealth_covariance(const Eigen::Ref<const Matrix>& segment,
                                           const Eigen::Ref<const Matrix>& mixing,
                                           std::span<const int> channels,
                                           const Matrix& channel_cov = Matrix());

enum class InputPolicy { kZero, kExcitation };

struct LabeledRun {
  Matrix U;       // T x m
  Matrix Y;       // T x p, attacked measurements
  Matrix clean_y; // T x p
  Matrix X;       // T x n, true states
  std::vector<std::uint8_t> labels;
};

/// Simulates x_{t+1} = A x_t + B u_t + w_t, y_t = C x_t + v_t + a_t from
/// x_0 = 0. `channel_sigma` sets the attack unit; empty means
/// innovation_sigma(model). Covariance-shift attacks mix the measurement
/// noise v_t of the chosen channels.
LabeledRun simulate_run(const StateSpaceModel& model, long length, InputPolicy policy,
                        std::span<const AttackScenario> scenarios, std::uint64_t seed,
                        const Vector& channel_sigma = Vector());

}  // namespace itdt
