#pragma once

#include <stdexcept>
#include <string>

namespace tba {

// Root of every exception thrown by the library. The CLI maps subclasses to
// exit codes, so new error kinds should derive from one of the groups below.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or size disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergence, failed convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller passed an out-of-range or inconsistent argument.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Invalid approximation plan (overlapping spans, bad indices).
class PlanError : public Error {
 public:
  using Error::Error;
};

// Infeasible or inconsistent synthetic plant.
class SpecError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. The subclasses let callers tell the failure
// modes apart without parsing messages.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class HeaderError : public FormatError {
 public:
  using FormatError::FormatError;
};

class OverlapError : public FormatError {
 public:
  using FormatError::FormatError;
};

class MissingWeightError : public FormatError {
 public:
  MissingWeightError(const std::string& key)
      : FormatError("missing weight '" + key + "'"), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace tba
