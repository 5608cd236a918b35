#pragma once

#include <stdexcept>
#include <string>

namespace dynxl {

// Every failure raised by the library derives from Error so callers can
// branch on category without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values reaching an operation that requires finite input.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong state or with inconsistent shapes.
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or insufficient input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Failure during a parameter update (non-finite gradient, bad stats).
class AdaptationError : public Error {
 public:
  using Error::Error;
};

// Reports that cannot be compared with each other.
class ComparisonError : public Error {
 public:
  using Error::Error;
};

// Vocabulary fingerprint of a checkpoint does not match the data.
class FingerprintError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training or evaluation.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t index)
      : Error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace dynxl
