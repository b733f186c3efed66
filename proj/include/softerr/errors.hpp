#pragma once

#include <stdexcept>
#include <string>

namespace softerr {

// Malformed caller input: bad shape, out-of-range index, invalid config value.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Reference data carries no variance (or samples are constant), so a
// relative metric is undefined.
struct DegenerateInput : std::domain_error {
  using std::domain_error::domain_error;
};

// Numeric quadrature failed to reach the requested tolerance.
struct QuadratureFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Curve fit cannot be posed (too few distinct points, constant response).
struct FitFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File-level problems: missing file, malformed header, truncated payload.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Container carries a format version this build does not understand.
struct UnsupportedVersion : IoError {
  using IoError::IoError;
};

// Stored checksum does not match the payload.
struct ChecksumMismatch : IoError {
  using IoError::IoError;
};

// Training loss became non-finite.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CLI/config problems that map to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace softerr
