#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rrm {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Step size outside the admissible range under a strict theory guard.
class GuardViolation : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class SizeLimit : public Error {
 public:
  using Error::Error;
};

class AuditUnavailable : public Error {
 public:
  using Error::Error;
};

class DegenerateWindow : public Error {
 public:
  using Error::Error;
};

class NumericOverflow : public Error {
 public:
  using Error::Error;
};

/// Non-finite iterate during a run. `inner` is 0 when the failure was
/// detected outside the inner loop (epoch-level diagnostics).
class NumericAbort : public Error {
 public:
  NumericAbort(std::size_t epoch, std::size_t inner, const std::string& what)
      : Error("non-finite value at epoch " + std::to_string(epoch) +
              ", inner step " + std::to_string(inner) + ": " + what),
        epoch_(epoch),
        inner_(inner) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t inner() const noexcept { return inner_; }

 private:
  std::size_t epoch_;
  std::size_t inner_;
};

}  // namespace rrm
