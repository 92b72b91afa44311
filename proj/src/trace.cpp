#include "aram/trace.hpp"

#include "aram/errors.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace aram {

namespace {

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::vector<TraceRecord> flatten_trace(std::string_view run_id,
                                       const std::vector<StepTrace>& steps) {
  std::vector<TraceRecord> out;
  for (const auto& step : steps) {
    for (const auto& rec : step.records) {
      TraceRecord r;
      r.run_id = std::string(run_id);
      r.step = step.step;
      r.position = rec.position;
      r.signal = rec.diagnostics.signal;
      r.noise = rec.diagnostics.noise;
      r.snr = rec.diagnostics.snr;
      r.lambda = rec.diagnostics.lambda;
      r.unmasked = rec.chosen_token.has_value();
      r.token = rec.chosen_token;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::string format_trace_line(const TraceRecord& r) {
  std::string line = "{\"run_id\":" + nlohmann::json(r.run_id).dump();
  line += ",\"step\":" + std::to_string(r.step);
  line += ",\"position\":" + std::to_string(r.position);
  line += ",\"signal\":" + fmt9(r.signal);
  line += ",\"noise\":" + fmt9(r.noise);
  line += ",\"snr\":" + fmt9(r.snr);
  line += ",\"lambda\":" + fmt9(r.lambda);
  line += std::string(",\"unmasked\":") + (r.unmasked ? "true" : "false");
  line += ",\"token\":" + (r.token ? std::to_string(*r.token) : std::string("null"));
  line += '}';
  return line;
}

void write_trace_jsonl(std::ostream& out, const std::vector<TraceRecord>& records) {
  for (const auto& r : records) out << format_trace_line(r) << '\n';
}

void write_trace_file(const std::string& path, const std::vector<TraceRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open trace file for writing: " + path);
  write_trace_jsonl(out, records);
  if (!out) fail(ErrorKind::Io, "failed writing trace file: " + path);
}

TraceRecord parse_trace_line(std::string_view line, std::size_t line_number) {
  const auto where = "trace line " + std::to_string(line_number) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Structural, where + "invalid JSON (" + e.what() + ")");
  }
  try {
    TraceRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.step = j.at("step").get<int>();
    r.position = j.at("position").get<std::size_t>();
    r.signal = j.at("signal").get<double>();
    r.noise = j.at("noise").get<double>();
    r.snr = j.at("snr").get<double>();
    r.lambda = j.at("lambda").get<double>();
    r.unmasked = j.at("unmasked").get<bool>();
    const auto& tok = j.at("token");
    if (!tok.is_null()) r.token = tok.get<TokenId>();
    if (r.unmasked != r.token.has_value()) {
      fail(ErrorKind::Structural, where + "token must be set exactly when unmasked is true");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Structural, where + "bad record (" + e.what() + ")");
  }
}

std::vector<TraceRecord> read_trace_jsonl(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_trace_line(line, n));
  }
  return out;
}

std::vector<TraceRecord> read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open trace file: " + path);
  return read_trace_jsonl(in);
}

std::vector<std::vector<TraceRecord>> split_runs(const std::vector<TraceRecord>& records) {
  std::vector<std::vector<TraceRecord>> runs;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records) {
    auto [it, inserted] = index.try_emplace(r.run_id, runs.size());
    if (inserted) runs.emplace_back();
    runs[it->second].push_back(r);
  }
  return runs;
}

}  // namespace aram
