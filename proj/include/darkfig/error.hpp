#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace darkfig {

enum class ErrorCode {
  // validation
  SchemaError,
  EncodingMismatch,
  FeatureMismatch,
  ModelMismatch,
  InvalidInput,
  SpecInvalid,
  LonelyPSU,
  PositivityViolation,
  InvalidCorrelation,
  DegenerateOutcomes,
  // numerical
  SingularDesign,
  Separation,
  NoConvergence,
};

std::string_view to_string(ErrorCode code);

/// Exit status used by the command-line tool: 1 for validation failures,
/// 2 for numerical failures.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string_view module, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace darkfig
