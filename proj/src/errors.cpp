#include "aram/errors.hpp"

#include <cstdio>

namespace aram {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidConfig: return "config";
    case ErrorKind::DegenerateDenominator: return "degenerate-denominator";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::Identity: return "identity";
    case ErrorKind::Structural: return "structural";
    case ErrorKind::Pairing: return "pairing";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

static std::string degenerate_message(double variance, double floor) {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "prior score variance %.3e is below the floor %.1e", variance, floor);
  return buf;
}

DegenerateDenominatorError::DegenerateDenominatorError(double variance, double floor)
    : Error(ErrorKind::DegenerateDenominator, degenerate_message(variance, floor)),
      variance_(variance),
      floor_(floor) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace aram
