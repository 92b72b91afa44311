#pragma once

// JSONL decode traces: one object per (step, masked position) with keys
// run_id, step, position, signal, noise, snr, lambda, unmasked, token.
// Floats carry 9 significant digits.

#include "aram/engine.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aram {

struct TraceRecord {
  std::string run_id;
  int step = 0;
  std::size_t position = 0;
  double signal = 0.0;
  double noise = 0.0;
  double snr = 0.0;
  double lambda = 0.0;
  bool unmasked = false;
  std::optional<TokenId> token;

  bool operator==(const TraceRecord&) const = default;
};

std::vector<TraceRecord> flatten_trace(std::string_view run_id,
                                       const std::vector<StepTrace>& steps);

std::string format_trace_line(const TraceRecord& record);
void write_trace_jsonl(std::ostream& out, const std::vector<TraceRecord>& records);
void write_trace_file(const std::string& path, const std::vector<TraceRecord>& records);

// Throws Structural naming the 1-based line number on malformed input.
TraceRecord parse_trace_line(std::string_view line, std::size_t line_number);
std::vector<TraceRecord> read_trace_jsonl(std::istream& in);
std::vector<TraceRecord> read_trace_file(const std::string& path);

// Splits records by run_id, keeping first-seen run order.
std::vector<std::vector<TraceRecord>> split_runs(const std::vector<TraceRecord>& records);

}  // namespace aram
