#pragma once

#include <stdexcept>
#include <string>

namespace pension {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, bad configuration, mismatched shapes.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OutOfRangeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Faults discovered while running. The CLI maps these to exit code 2.
class RuntimeFault : public Error {
 public:
  using Error::Error;
};

/// A caller broke the agent/environment step protocol.
class ProtocolError : public RuntimeFault {
 public:
  using RuntimeFault::RuntimeFault;
};

/// An internal invariant did not hold. Reaching this is a bug.
class InvariantViolation : public RuntimeFault {
 public:
  using RuntimeFault::RuntimeFault;
};

/// Non-finite value produced by the network or the loss.
class NumericFault : public RuntimeFault {
 public:
  NumericFault(const std::string& what, int location)
      : RuntimeFault(what), location_(location) {}

  /// Layer index for forward faults, transition index for loss faults.
  int location() const noexcept { return location_; }

 private:
  int location_;
};

}  // namespace pension
