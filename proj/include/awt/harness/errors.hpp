#pragma once

#include <stdexcept>
#include <string>

namespace awt::harness {

/// Invalid or inconsistent configuration; `run` maps it to exit status 2.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// File could not be opened, read or written; exit status 3.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File opened but its contents are malformed; also exit status 3.
struct FormatError : IoError {
  using IoError::IoError;
};

}  // namespace awt::harness
