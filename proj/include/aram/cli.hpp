#pragma once

#include <iosfwd>

namespace aram {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;      // verification or evaluation failed
inline constexpr int kExitConfigError = 2;  // configuration, IO or backend error

// Entry point for the `aram` tool: decode, eval, verify, analyze, simulate.
// Errors go to `err` as one JSON object {"error": kind, "message": text}.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace aram
