#pragma once

#include <stdexcept>
#include <string>

namespace adpde {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument, shape/grid mismatch or malformed configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or otherwise unreadable ADPF data.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// CFL violation, blow-up, NaN loss or similar numerical failure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace adpde
