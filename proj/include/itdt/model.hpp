#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "itdt/numerics.hpp"

namespace itdt {

/// Discrete LTI plant  x_{t+1} = A x_t + B u_t + w_t,  y_t = C x_t + v_t,
/// with w ~ N(0, Q) and v ~ N(0, R). m = 0 (no inputs) is allowed.
struct StateSpaceModel {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix Q;
  Matrix R;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }
  Eigen::Index p() const { return C.rows(); }
};

enum class ViolationCode {
  kDimensionMismatch,
  kNonFiniteEntry,
  kUnstableA,
  kMarginallyStable,  // warning only: spectral radius in [0.999, 1)
  kQNotSymmetric,
  kQNotPositiveDefinite,
  kRNotSymmetric,
  kRNotPositiveDefinite,
};

std::string_view to_string(ViolationCode code);

struct Violation {
  ViolationCode code;
  std::string message;

  bool is_warning() const { return code == ViolationCode::kMarginallyStable; }
};

/// Every failed invariant, in a fixed order. Empty means valid.
std::vector<Violation> validate(const StateSpaceModel& model);

/// True when `violations` holds nothing but warnings.
bool passes(const std::vector<Violation>& violations);

/// Steady-state Kalman filter ("digital twin"): constant gain K and innovation
/// covariance Sigma = C P Cᵀ + R, with Sigma's factorization cached for scoring.
class SteadyStateFilter {
 public:
  /// Checks both invariants (Sigma = CPCᵀ+R, K = PCᵀSigma⁻¹) at `rel_tol`.
  SteadyStateFilter(StateSpaceModel model, Matrix P, Matrix K, Matrix sigma,
                    double rel_tol = 1e-9);

  const StateSpaceModel& model() const { return model_; }
  const Matrix& P() const { return P_; }
  const Matrix& K() const { return K_; }
  const Matrix& sigma() const { return sigma_; }
  const SpdFactor& sigma_factor() const { return sigma_factor_; }
  double log_det_sigma() const { return sigma_factor_.log_det(); }

 private:
  StateSpaceModel model_;
  Matrix P_;
  Matrix K_;
  Matrix sigma_;
  SpdFactor sigma_factor_;
};

/// Affine channel standardization z = (x - mean) / scale. Empty = identity.
struct ChannelScaling {
  Vector mean;
  Vector scale;

  bool empty() const { return mean.size() == 0; }
  Vector apply(const Eigen::Ref<const Vector>& x) const;
};

struct SweepRow {
  int window = 0;
  double tau = 0.0;
  double f1 = 0.0;
};

/// Everything recorded alongside the matrices: where the model came from and,
/// once calibrated, the detector settings and threshold.
struct Provenance {
  std::string created;
  std::string training_hash;
  int order = 0;
  int horizon = 0;
  std::vector<std::string> input_columns;
  std::vector<std::string> output_columns;
  ChannelScaling input_scaling;
  ChannelScaling output_scaling;

  // Calibration block; tau absent until the model has been calibrated.
  std::optional<double> tau;
  std::optional<double> alpha;
  std::optional<long> calibration_samples;
  std::optional<std::pair<double, double>> tau_ci95;
  std::optional<int> window;
  std::optional<double> epsilon;
  std::optional<int> warmup;
  std::optional<int> consecutive;
  std::string reference = "theoretical";  // or "empirical"
  std::optional<Matrix> reference_sigma;
  std::vector<SweepRow> sweep;
};

struct ModelFile {
  static constexpr int kVersion = 1;

  SteadyStateFilter filter;
  Provenance provenance;
};

/// Plain-text `.itdt-model` encoding; reals written with 17 significant digits
/// so that parse(serialize(f)) is exact.
std::string serialize(const ModelFile& file);

/// Throws Error(kParseError) naming the line, or Error(kVersionMismatch).
ModelFile parse(std::string_view text);

ModelFile read_model_file(const std::string& path);
void write_model_file(const std::string& path, const ModelFile& file);

}  // namespace itdt
