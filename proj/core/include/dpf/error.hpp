#pragma once

#include <stdexcept>
#include <string>

namespace dpf {

/// Raised when a loss or gradient becomes non-finite.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for unreadable or malformed binary inputs (IDX, checkpoints, mask logs).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dpf
