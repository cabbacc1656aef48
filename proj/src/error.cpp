#include "darkfig/error.hpp"

namespace darkfig {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::EncodingMismatch: return "EncodingMismatch";
    case ErrorCode::FeatureMismatch: return "FeatureMismatch";
    case ErrorCode::ModelMismatch: return "ModelMismatch";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::LonelyPSU: return "LonelyPSU";
    case ErrorCode::PositivityViolation: return "PositivityViolation";
    case ErrorCode::InvalidCorrelation: return "InvalidCorrelation";
    case ErrorCode::DegenerateOutcomes: return "DegenerateOutcomes";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::Separation: return "Separation";
    case ErrorCode::NoConvergence: return "NoConvergence";
  }
  return "Unknown";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::SingularDesign:
    case ErrorCode::Separation:
    case ErrorCode::NoConvergence:
      return 2;
    default:
      return 1;
  }
}

Error::Error(ErrorCode code, std::string_view module, const std::string& message)
    : std::runtime_error(std::string(module) + ": " + std::string(to_string(code)) + ": " + message),
      code_(code),
      module_(module) {}

}  // namespace darkfig
