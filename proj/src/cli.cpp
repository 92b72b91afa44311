#include "aram/cli.hpp"

#include "aram/analysis.hpp"
#include "aram/config.hpp"
#include "aram/errors.hpp"
#include "aram/eval.hpp"
#include "aram/toy_backends.hpp"
#include "aram/trace.hpp"
#include "aram/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace aram {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

// The config-backed flags of one subcommand.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "flat key = value config file");
    for (const auto& key : config_keys()) {
      options[key] = app->add_option(flag_name(key), values[key], "config key " + key);
    }
  }

  RunConfig resolve() const {
    Settings flags;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) flags[key] = values.at(key);
    }
    const Settings file = config_path.empty() ? Settings{} : load_config_file(config_path);
    std::optional<std::string> env;
    if (const char* v = std::getenv("ARAM_BRIDGE_URL")) env = v;
    return resolve_config(flags, file, env);
  }
};

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text_file(const std::string& path, const std::string& text) {
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// decode

int cmd_decode(const RunConfig& config, const std::string& query,
               const std::vector<std::string>& contexts, std::ostream& out) {
  const auto backend = make_backend(config);
  const DecodeResult r = decode(PromptInput{query, contexts}, config.decode_config(), *backend);
  const auto records = flatten_trace(config.run_id, r.trace);
  const std::string trace_path = config.out.empty() ? "trace.jsonl" : config.out;
  ensure_parent_dir(trace_path);
  write_trace_file(trace_path, records);

  double lambda_sum = 0.0;
  for (const auto& rec : records) lambda_sum += rec.lambda;
  const double mean_lambda = records.empty() ? 0.0 : lambda_sum / static_cast<double>(records.size());
  out << "answer: " << r.text << '\n'
      << "policy: " << config.policy << '\n'
      << "steps: " << r.steps_executed << '\n'
      << "nfe: " << r.nfe_count << " (" << fmt(static_cast<double>(r.nfe_count) / r.steps_executed)
      << " per step)\n"
      << "mean_lambda: " << fmt(mean_lambda) << '\n'
      << "backend_latency_ms: " << fmt(r.backend_latency_ms) << '\n'
      << "trace: " << trace_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const RunConfig& config, std::ostream& out) {
  if (config.fixtures.empty()) fail(ErrorKind::InvalidConfig, "eval needs --fixtures");
  const auto fixtures = load_fixtures(config.fixtures);
  if (fixtures.empty()) fail(ErrorKind::InvalidConfig, "fixtures file '" + config.fixtures + "' is empty");
  const auto backend = make_backend(config);

  EvalOptions options;
  options.decode = config.decode_config();
  options.parallelism = config.jobs;
  for (const auto& name : split_list(config.methods)) {
    options.methods.push_back({name, guidance_for(config, name)});
  }
  if (options.methods.empty()) fail(ErrorKind::InvalidConfig, "--methods is empty");

  const EvalReport report = run_eval(fixtures, options, *backend);
  const std::string report_path = config.out.empty() ? "report.json" : config.out;
  write_text_file(report_path, report_to_json(report, options.decode).dump(2) + "\n");

  char line[256];
  std::snprintf(line, sizeof line, "%-14s %4s %5s %7s %7s %9s %9s %9s %9s %9s\n", "method", "n",
                "fail", "EM", "F1", "NFE/step", "positive", "negative", "cons_ok", "cons_bad");
  out << line;
  bool any_success = report.baseline.scores.n > 0;
  auto row = [&](const MethodReport& m) {
    any_success = any_success || m.scores.n > 0;
    if (m.interaction) {
      std::snprintf(line, sizeof line, "%-14s %4zu %5zu %7.4f %7.4f %9.3g %9.4f %9.4f %9.4f %9.4f\n",
                    m.name.c_str(), m.scores.n, m.failures, m.scores.em, m.scores.f1,
                    m.nfe_per_step, m.interaction->positive, m.interaction->negative,
                    m.interaction->consistently_correct, m.interaction->consistently_wrong);
    } else {
      std::snprintf(line, sizeof line, "%-14s %4zu %5zu %7.4f %7.4f %9.3g %9s %9s %9s %9s\n",
                    m.name.c_str(), m.scores.n, m.failures, m.scores.em, m.scores.f1,
                    m.nfe_per_step, "-", "-", "-", "-");
    }
    out << line;
  };
  row(report.baseline);
  for (const auto& m : report.methods) row(m);
  out << "report: " << report_path << '\n';
  return any_success ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// verify

int cmd_verify(std::uint64_t seed, const std::string& properties, std::ostream& out) {
  const auto results = run_verification(seed, split_list(properties));
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed;
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " cases=" << r.cases
        << " max_residual=" << fmt(r.max_residual, "%.3e") << " tolerance=" << fmt(r.tolerance, "%.0e");
    if (!r.passed) out << " failing_seed=" << *r.failing_seed << " (" << r.detail << ")";
    out << '\n';
  }
  out << (ok ? "all properties passed" : "verification FAILED") << " (seed " << seed << ")\n";
  return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// analyze

std::vector<LabeledRun> load_labeled(const std::vector<std::string>& specs) {
  std::vector<LabeledRun> out;
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    const std::string label = eq == std::string::npos ? fs::path(path).stem().string() : spec.substr(0, eq);
    for (auto& run : label_runs(label, read_trace_file(path))) out.push_back(std::move(run));
  }
  return out;
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

int cmd_analyze(const std::string& mode, const std::vector<std::string>& traces,
                const std::vector<std::string>& paired, const std::string& out_dir,
                std::ostream& out) {
  if (traces.empty()) fail(ErrorKind::InvalidConfig, "analyze needs at least one --trace");
  const std::string dir = out_dir.empty() ? "." : out_dir;
  fs::create_directories(dir);

  if (mode == "trajectory") {
    std::ostringstream csv;
    write_trajectory_csv(csv, aggregate_trajectories(load_labeled(traces)));
    const std::string path = (fs::path(dir) / "trajectory.csv").string();
    write_text_file(path, csv.str());
    out << "wrote " << path << '\n';
  } else if (mode == "heatmap") {
    for (const auto& spec : traces) {
      const auto eq = spec.find('=');
      const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
      for (const auto& run : split_runs(read_trace_file(path))) {
        const HeatmapTable table = build_heatmap(run);
        const std::string file = (fs::path(dir) / ("heatmap_" + safe_name(table.run_id) + ".json")).string();
        write_text_file(file, heatmap_to_json(table).dump(2) + "\n");
        out << "wrote " << file << '\n';
      }
    }
  } else if (mode == "proxy") {
    if (paired.empty()) fail(ErrorKind::InvalidConfig, "proxy mode needs --paired traces");
    const ProxyComparison cmp = proxy_comparison(load_labeled(traces), load_labeled(paired));
    std::ostringstream rows, sep;
    write_proxy_csv(rows, cmp.rows);
    write_separation_csv(sep, cmp.separation);
    const std::string p1 = (fs::path(dir) / "proxy_comparison.csv").string();
    const std::string p2 = (fs::path(dir) / "proxy_separation.csv").string();
    write_text_file(p1, rows.str());
    write_text_file(p2, sep.str());
    out << "wrote " << p1 << '\n' << "wrote " << p2 << '\n';
  } else {
    fail(ErrorKind::InvalidConfig, "analyze mode must be trajectory, heatmap or proxy");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const RunConfig& config, const std::string& kinds, std::size_t count,
                 std::size_t vocab, std::ostream& out) {
  std::vector<ScenarioKind> selected;
  if (kinds == "all") {
    selected = {ScenarioKind::Reliable, ScenarioKind::Conflicting, ScenarioKind::Irrelevant};
  } else {
    for (const auto& k : split_list(kinds)) selected.push_back(parse_scenario_kind(k));
  }
  const std::string dir = config.out.empty() ? "." : config.out;
  fs::create_directories(dir);
  const DecodeConfig decode_cfg = config.decode_config();
  const PromptInput prompt{"scenario query", {"scenario context"}};

  for (const ScenarioKind kind : selected) {
    std::vector<TraceRecord> records;
    double lambda_sum = 0.0;
    std::size_t lambda_n = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const ScenarioBackend backend(
          generate_scenario(kind, vocab, config.sampler.seed + i, config.length));
      const DecodeResult r = decode(prompt, decode_cfg, backend);
      char id[64];
      std::snprintf(id, sizeof id, "%s-%04zu", std::string(to_string(kind)).c_str(), i);
      for (auto& rec : flatten_trace(id, r.trace)) {
        lambda_sum += rec.lambda;
        ++lambda_n;
        records.push_back(std::move(rec));
      }
    }
    const std::string path = (fs::path(dir) / (std::string(to_string(kind)) + ".jsonl")).string();
    write_trace_file(path, records);
    out << to_string(kind) << ": " << count << " runs, mean_lambda "
        << fmt(lambda_n ? lambda_sum / static_cast<double>(lambda_n) : 0.0) << ", wrote " << path << '\n';
  }
  return kExitOk;
}

void report_error(std::ostream& err, std::string_view kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = std::string(kind);
  j["message"] = message;
  err << j.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive retrieval guidance for masked diffusion decoding", "aram"};
  app.require_subcommand(1);

  auto* decode_cmd = app.add_subcommand("decode", "decode one query and write its trace");
  ConfigFlags decode_flags;
  decode_flags.attach(decode_cmd);
  std::string query;
  std::vector<std::string> contexts;
  decode_cmd->add_option("--query", query, "question text")->required();
  decode_cmd->add_option("--context", contexts, "retrieved passage (repeatable)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate methods on a QA fixture file");
  ConfigFlags eval_flags;
  eval_flags.attach(eval_cmd);

  auto* verify_cmd = app.add_subcommand("verify", "run the core-math property suite");
  std::uint64_t verify_seed = 0;
  std::string properties;
  verify_cmd->add_option("--seed", verify_seed, "base seed");
  verify_cmd->add_option("--properties", properties, "comma-separated subset");

  auto* analyze_cmd = app.add_subcommand("analyze", "aggregate trace files");
  std::string mode;
  std::vector<std::string> traces, paired;
  std::string analyze_out;
  analyze_cmd->add_option("--mode", mode, "trajectory | heatmap | proxy")->required();
  analyze_cmd->add_option("--trace", traces, "[label=]path (repeatable)");
  analyze_cmd->add_option("--paired", paired, "[label=]path for the prior-score-variance runs");
  analyze_cmd->add_option("--out", analyze_out, "output directory");

  auto* simulate_cmd = app.add_subcommand("simulate", "decode generated conflict scenarios");
  ConfigFlags simulate_flags;
  simulate_flags.attach(simulate_cmd);
  std::string kinds = "all";
  std::size_t count = 200;
  std::size_t vocab = 16;
  simulate_cmd->add_option("--kind", kinds, "reliable, irrelevant, conflicting or all");
  simulate_cmd->add_option("--count", count, "scenarios per kind");
  simulate_cmd->add_option("--vocab", vocab, "vocabulary size (>= 4)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    report_error(err, "usage", e.what());
    return kExitConfigError;
  }

  try {
    if (decode_cmd->parsed()) return cmd_decode(decode_flags.resolve(), query, contexts, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_flags.resolve(), out);
    if (verify_cmd->parsed()) return cmd_verify(verify_seed, properties, out);
    if (analyze_cmd->parsed()) return cmd_analyze(mode, traces, paired, analyze_out, out);
    if (simulate_cmd->parsed()) return cmd_simulate(simulate_flags.resolve(), kinds, count, vocab, out);
  } catch (const Error& e) {
    report_error(err, error_kind_name(e.kind()), e.what());
    return kExitConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error(err, "io", e.what());
    return kExitConfigError;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return kExitConfigError;
  }
  return kExitConfigError;
}

}  // namespace aram
