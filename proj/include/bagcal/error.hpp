#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bagcal {

enum class Errc {
  DimensionMismatch,
  ZeroVarianceColumn,
  DegenerateWeights,
  NotSymmetric,
  NoConvergence,
  OutOfRange,
  InfeasibleSize,
  SingularSystem,
  ZeroMean,
  AllIterationsFailed,
  InfeasibleSpec,
  InsufficientRuns,
  ZeroTotal,
  ParseError,
  NonNumericCell,
  DuplicateUnitId,
  MissingValue,
  InvalidConfig,
  IoError,
  SamplingFailed,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ZeroVarianceColumn: return "ZeroVarianceColumn";
    case Errc::DegenerateWeights: return "DegenerateWeights";
    case Errc::NotSymmetric: return "NotSymmetric";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::InfeasibleSize: return "InfeasibleSize";
    case Errc::SingularSystem: return "SingularSystem";
    case Errc::ZeroMean: return "ZeroMean";
    case Errc::AllIterationsFailed: return "AllIterationsFailed";
    case Errc::InfeasibleSpec: return "InfeasibleSpec";
    case Errc::InsufficientRuns: return "InsufficientRuns";
    case Errc::ZeroTotal: return "ZeroTotal";
    case Errc::ParseError: return "ParseError";
    case Errc::NonNumericCell: return "NonNumericCell";
    case Errc::DuplicateUnitId: return "DuplicateUnitId";
    case Errc::MissingValue: return "MissingValue";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::IoError: return "IoError";
    case Errc::SamplingFailed: return "SamplingFailed";
  }
  return "Unknown";
}

/// Error raised by every module. Carries the owning module name and a code
/// so the command line can report `module.Code` without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(std::string_view module, Errc code, const std::string& message)
      : std::runtime_error(std::string(module) + "." + std::string(to_string(code)) + ": " + message),
        module_(module),
        code_(code),
        message_(message) {}

  const std::string& module() const noexcept { return module_; }
  Errc code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string module_;
  Errc code_;
  std::string message_;
};

}  // namespace bagcal
