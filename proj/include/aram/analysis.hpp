#pragma once

// Aggregations over decode traces: per-step lambda trajectories, token
// heatmaps and noise-proxy comparisons. CSV floats use 6 significant digits.

#include "aram/trace.hpp"

#include <json.hpp>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace aram {

// Records of one run tagged with a group label ("gold", "reliable", ...).
struct LabeledRun {
  std::string group;
  std::vector<TraceRecord> records;
};

// Groups runs by label; a file with several run_ids yields several runs.
std::vector<LabeledRun> label_runs(const std::string& group, const std::vector<TraceRecord>& records);

struct TrajectoryRow {
  int step = 0;
  std::string group;
  double mean_lambda = 0.0;
  double std_lambda = 0.0;  // population
  std::size_t n = 0;
};

// Rows ordered by group name, then step descending (T first). Groups with no
// record at a step get no row.
std::vector<TrajectoryRow> aggregate_trajectories(const std::vector<LabeledRun>& runs);

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows);

struct HeatmapTable {
  std::string run_id;
  int steps = 0;
  std::size_t length = 0;
  // rows[r] is step steps - r; null where the position was already unmasked.
  std::vector<std::vector<std::optional<double>>> lambda;
  // (step, position) commit events in decode order.
  std::vector<std::pair<int, std::size_t>> markers;
};

// Throws Structural naming the missing step when the trace skips a step
// below its first one, or when positions are left uncommitted.
HeatmapTable build_heatmap(const std::vector<TraceRecord>& run);

nlohmann::ordered_json heatmap_to_json(const HeatmapTable& table);

struct ProxyRow {
  int step = 0;
  std::string group;
  std::size_t n = 0;
  double cond_entropy_noise = 0.0;
  double cond_entropy_lambda = 0.0;
  double score_variance_noise = 0.0;
  double score_variance_lambda = 0.0;
};

struct SeparationStat {
  std::string proxy;
  std::string group_a;
  std::string group_b;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double pooled_se = 0.0;
  double z = 0.0;  // (mean_a - mean_b) / pooled_se
  bool separated = false;  // z >= 3
};

struct ProxyComparison {
  std::vector<ProxyRow> rows;
  std::vector<SeparationStat> separation;
};

// `entropy_runs` and `variance_runs` are the same scenarios decoded with
// the CondEntropy and PriorScoreVariance noise proxies. Runs are paired by
// (group, run_id); any unmatched run throws Pairing. Separation compares
// per-run mean lambda for every ordered pair of groups.
ProxyComparison proxy_comparison(const std::vector<LabeledRun>& entropy_runs,
                                 const std::vector<LabeledRun>& variance_runs);

void write_proxy_csv(std::ostream& out, const std::vector<ProxyRow>& rows);
void write_separation_csv(std::ostream& out, const std::vector<SeparationStat>& stats);

// 6 significant digits, as used by every CSV writer here.
std::string format_csv_number(double value);

}  // namespace aram
