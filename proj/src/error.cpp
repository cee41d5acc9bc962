#include "itdt/error.hpp"

namespace itdt {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kStillNotPositiveDefinite: return "StillNotPositiveDefinite";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kDegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorCode::kUnstableModel: return "UnstableModel";
    case ErrorCode::kNumericalFailure: return "NumericalFailure";
    case ErrorCode::kWindowNotFull: return "WindowNotFull";
    case ErrorCode::kInternalConsistency: return "InternalConsistency";
    case ErrorCode::kEmptySet: return "EmptySet";
    case ErrorCode::kInvalidIterations: return "InvalidIterations";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInvalidMixing: return "InvalidMixing";
    case ErrorCode::kInvalidStages: return "InvalidStages";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kInvalidK: return "InvalidK";
    case ErrorCode::kAllZeroDifferences: return "AllZeroDifferences";
    case ErrorCode::kTooFewPairs: return "TooFewPairs";
  }
  return "Unknown";
}

}  // namespace itdt
