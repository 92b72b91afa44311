#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aram {

enum class ErrorKind {
  InvalidInput,
  InvalidConfig,
  DegenerateDenominator,
  Transport,
  Protocol,
  Identity,
  Structural,
  Pairing,
  Io,
};

std::string_view error_kind_name(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by ideal_lambda_star when Var_prior(s) is below the floor.
class DegenerateDenominatorError : public Error {
 public:
  DegenerateDenominatorError(double variance, double floor);

  double variance() const noexcept { return variance_; }
  double floor() const noexcept { return floor_; }

 private:
  double variance_;
  double floor_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace aram
