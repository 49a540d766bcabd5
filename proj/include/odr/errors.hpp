#pragma once

#include <stdexcept>
#include <string>

namespace odr {

// Base class for every error raised by the library. Callers that only need
// to report a failure can catch this; the subclasses exist so the CLI can map
// failures to exit codes and tests can assert on the failure category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid shapes, hyperparameters or configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Arguments outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A label outside the configured rank range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf detected in a tensor.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed manifests, images, checkpoints; filesystem failures.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Failures during optimization (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. a stale activation record.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace odr
