#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace itdt {

enum class ErrorCode {
  kNotPositiveDefinite,
  kStillNotPositiveDefinite,
  kDimensionMismatch,
  kConvergenceFailure,
  kNoConvergence,
  kNonFiniteInput,
  kParseError,
  kVersionMismatch,
  kInsufficientData,
  kDegenerateSpectrum,
  kUnstableModel,
  kNumericalFailure,
  kWindowNotFull,
  kInternalConsistency,
  kEmptySet,
  kInvalidIterations,
  kInvalidArgument,
  kInvalidMixing,
  kInvalidStages,
  kLengthMismatch,
  kInvalidK,
  kAllZeroDifferences,
  kTooFewPairs,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

/// Thrown by Cholesky-based routines; `pivot()` is the first failing index.
class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(long pivot, const std::string& context,
                           ErrorCode code = ErrorCode::kNotPositiveDefinite)
      : Error(code, context + " (pivot " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}

  long pivot() const noexcept { return pivot_; }

 private:
  long pivot_;
};

}  // namespace itdt
