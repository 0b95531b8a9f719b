#pragma once

#include <stdexcept>
#include <string>

namespace climemu {

// Data-level failures (bad files, mismatched shapes, unknown names).
// CLI maps these to exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainMismatch : DataError {
  using DataError::DataError;
};

struct FormatError : DataError {
  FormatError(const std::string& what, std::size_t byte_offset)
      : DataError(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

struct UnknownScenario : DataError {
  using DataError::DataError;
};

struct DegenerateVariable : DataError {
  using DataError::DataError;
};

// Numerical failures (divergence, rank deficiency, undefined metrics).
// CLI maps these to exit code 4.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitError : NumericalError {
  using NumericalError::NumericalError;
};

struct TrainingFailure : NumericalError {
  using NumericalError::NumericalError;
};

struct RolloutDiverged : NumericalError {
  using NumericalError::NumericalError;
};

struct SelectionFailure : NumericalError {
  using NumericalError::NumericalError;
};

struct UndefinedMetric : NumericalError {
  using NumericalError::NumericalError;
};

}  // namespace climemu
