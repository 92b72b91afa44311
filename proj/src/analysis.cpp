#include "aram/analysis.hpp"

#include "aram/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

namespace aram {

using nlohmann::ordered_json;

std::string format_csv_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::vector<LabeledRun> label_runs(const std::string& group,
                                   const std::vector<TraceRecord>& records) {
  std::vector<LabeledRun> out;
  for (auto& run : split_runs(records)) out.push_back({group, std::move(run)});
  return out;
}

namespace {

// Sorting first makes the sums independent of input order.
double sorted_mean(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double population_std(std::vector<double>& v, double mean) {
  std::vector<double> sq;
  sq.reserve(v.size());
  for (double x : v) sq.push_back((x - mean) * (x - mean));
  return std::sqrt(sorted_mean(sq));
}

double sample_variance(std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  std::vector<double> sq;
  sq.reserve(v.size());
  for (double x : v) sq.push_back((x - mean) * (x - mean));
  std::sort(sq.begin(), sq.end());
  double s = 0.0;
  for (double x : sq) s += x;
  return s / static_cast<double>(v.size() - 1);
}

struct StepKey {
  std::string group;
  int step;
  bool operator<(const StepKey& o) const {
    if (group != o.group) return group < o.group;
    return step > o.step;
  }
};

}  // namespace

std::vector<TrajectoryRow> aggregate_trajectories(const std::vector<LabeledRun>& runs) {
  std::map<StepKey, std::vector<double>> cells;
  for (const auto& run : runs) {
    for (const auto& r : run.records) cells[{run.group, r.step}].push_back(r.lambda);
  }
  std::vector<TrajectoryRow> rows;
  for (auto& [key, values] : cells) {
    TrajectoryRow row;
    row.group = key.group;
    row.step = key.step;
    row.n = values.size();
    row.mean_lambda = sorted_mean(values);
    row.std_lambda = population_std(values, row.mean_lambda);
    rows.push_back(row);
  }
  return rows;
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  out << "step,group,mean_lambda,std_lambda,n\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.group << ',' << format_csv_number(r.mean_lambda) << ','
        << format_csv_number(r.std_lambda) << ',' << r.n << '\n';
  }
}

// ---------------------------------------------------------------------------
// Heatmap

HeatmapTable build_heatmap(const std::vector<TraceRecord>& run) {
  if (run.empty()) fail(ErrorKind::Structural, "trace is empty");
  HeatmapTable t;
  t.run_id = run.front().run_id;

  std::map<int, std::vector<const TraceRecord*>, std::greater<>> by_step;
  for (const auto& r : run) {
    if (r.run_id != t.run_id) {
      fail(ErrorKind::Structural, "heatmap input mixes runs '" + t.run_id + "' and '" + r.run_id + "'");
    }
    if (r.step < 1) fail(ErrorKind::Structural, "trace has invalid step " + std::to_string(r.step));
    by_step[r.step].push_back(&r);
  }
  t.steps = by_step.begin()->first;
  // Every position is masked at the first step.
  t.length = by_step.begin()->second.size();

  std::set<std::size_t> committed;
  int expected = t.steps;
  for (const auto& [step, records] : by_step) {
    if (step != expected) {
      fail(ErrorKind::Structural, "trace is missing step " + std::to_string(expected));
    }
    std::vector<const TraceRecord*> sorted = records;
    std::sort(sorted.begin(), sorted.end(),
              [](const TraceRecord* a, const TraceRecord* b) { return a->position < b->position; });
    for (const auto* r : sorted) {
      if (r->position >= t.length) {
        fail(ErrorKind::Structural, "step " + std::to_string(step) + " has position " +
                                        std::to_string(r->position) + " beyond length " +
                                        std::to_string(t.length));
      }
      if (committed.contains(r->position)) {
        fail(ErrorKind::Structural, "step " + std::to_string(step) + " reports position " +
                                        std::to_string(r->position) + " after it was unmasked");
      }
    }
    for (const auto* r : sorted) {
      if (r->unmasked) {
        committed.insert(r->position);
        t.markers.emplace_back(step, r->position);
      }
    }
    --expected;
  }
  if (committed.size() != t.length) {
    fail(ErrorKind::Structural, "trace is missing step " + std::to_string(expected) + " (" +
                                    std::to_string(t.length - committed.size()) +
                                    " positions never unmasked)");
  }

  t.lambda.assign(static_cast<std::size_t>(t.steps),
                  std::vector<std::optional<double>>(t.length));
  for (const auto& [step, records] : by_step) {
    auto& row = t.lambda[static_cast<std::size_t>(t.steps - step)];
    for (const auto* r : records) row[r->position] = r->lambda;
  }
  return t;
}

ordered_json heatmap_to_json(const HeatmapTable& table) {
  ordered_json j;
  j["run_id"] = table.run_id;
  j["steps"] = table.steps;
  j["length"] = table.length;
  ordered_json labels = ordered_json::array();
  for (int s = table.steps; s >= 1; --s) labels.push_back(s);
  j["step_labels"] = labels;
  ordered_json rows = ordered_json::array();
  for (const auto& row : table.lambda) {
    ordered_json r = ordered_json::array();
    for (const auto& v : row) r.push_back(v ? ordered_json(*v) : ordered_json());
    rows.push_back(r);
  }
  j["lambda"] = rows;
  ordered_json markers = ordered_json::array();
  for (const auto& [step, pos] : table.markers) {
    ordered_json m;
    m["step"] = step;
    m["position"] = pos;
    markers.push_back(m);
  }
  j["unmask_markers"] = markers;
  return j;
}

// ---------------------------------------------------------------------------
// Proxy comparison

namespace {

using RunKey = std::pair<std::string, std::string>;  // group, run_id

std::map<RunKey, const LabeledRun*> index_runs(const std::vector<LabeledRun>& runs,
                                               const char* which) {
  std::map<RunKey, const LabeledRun*> out;
  for (const auto& run : runs) {
    if (run.records.empty()) fail(ErrorKind::Pairing, std::string(which) + " run is empty");
    RunKey key{run.group, run.records.front().run_id};
    if (!out.emplace(key, &run).second) {
      fail(ErrorKind::Pairing, std::string(which) + " runs contain duplicate run '" + key.second +
                                   "' in group '" + key.first + "'");
    }
  }
  return out;
}

double run_mean_lambda(const LabeledRun& run) {
  std::vector<double> v;
  for (const auto& r : run.records) v.push_back(r.lambda);
  return sorted_mean(v);
}

}  // namespace

ProxyComparison proxy_comparison(const std::vector<LabeledRun>& entropy_runs,
                                 const std::vector<LabeledRun>& variance_runs) {
  if (entropy_runs.size() != variance_runs.size()) {
    fail(ErrorKind::Pairing, "paired run counts differ: " + std::to_string(entropy_runs.size()) +
                                 " cond-entropy vs " + std::to_string(variance_runs.size()) +
                                 " prior-score-variance");
  }
  const auto a = index_runs(entropy_runs, "cond-entropy");
  const auto b = index_runs(variance_runs, "prior-score-variance");
  for (const auto& [key, run] : a) {
    if (!b.contains(key)) {
      fail(ErrorKind::Pairing, "run '" + key.second + "' in group '" + key.first +
                                   "' has no prior-score-variance partner");
    }
  }

  struct Cell {
    std::vector<double> en, el, vn, vl;
  };
  std::map<StepKey, Cell> cells;
  for (const auto& run : entropy_runs) {
    for (const auto& r : run.records) {
      auto& c = cells[{run.group, r.step}];
      c.en.push_back(r.noise);
      c.el.push_back(r.lambda);
    }
  }
  for (const auto& run : variance_runs) {
    for (const auto& r : run.records) {
      auto& c = cells[{run.group, r.step}];
      c.vn.push_back(r.noise);
      c.vl.push_back(r.lambda);
    }
  }

  ProxyComparison out;
  for (auto& [key, c] : cells) {
    if (c.en.size() != c.vn.size()) {
      fail(ErrorKind::Pairing, "group '" + key.group + "' step " + std::to_string(key.step) +
                                   " has " + std::to_string(c.en.size()) + " vs " +
                                   std::to_string(c.vn.size()) + " records across proxies");
    }
    ProxyRow row;
    row.step = key.step;
    row.group = key.group;
    row.n = c.en.size();
    row.cond_entropy_noise = sorted_mean(c.en);
    row.cond_entropy_lambda = sorted_mean(c.el);
    row.score_variance_noise = sorted_mean(c.vn);
    row.score_variance_lambda = sorted_mean(c.vl);
    out.rows.push_back(row);
  }

  auto separation = [&](const std::map<RunKey, const LabeledRun*>& runs, const std::string& proxy) {
    std::map<std::string, std::vector<double>> by_group;
    for (const auto& [key, run] : runs) by_group[key.first].push_back(run_mean_lambda(*run));
    for (auto ga = by_group.begin(); ga != by_group.end(); ++ga) {
      for (auto gb = by_group.begin(); gb != by_group.end(); ++gb) {
        if (ga == gb) continue;
        SeparationStat s;
        s.proxy = proxy;
        s.group_a = ga->first;
        s.group_b = gb->first;
        s.n_a = ga->second.size();
        s.n_b = gb->second.size();
        std::vector<double> va = ga->second, vb = gb->second;
        s.mean_a = sorted_mean(va);
        s.mean_b = sorted_mean(vb);
        s.pooled_se = std::sqrt(sample_variance(va, s.mean_a) / static_cast<double>(s.n_a) +
                                sample_variance(vb, s.mean_b) / static_cast<double>(s.n_b));
        const double diff = s.mean_a - s.mean_b;
        if (s.pooled_se > 0.0) {
          s.z = diff / s.pooled_se;
        } else {
          s.z = diff > 0.0 ? INFINITY : (diff < 0.0 ? -INFINITY : 0.0);
        }
        s.separated = s.z >= 3.0;
        out.separation.push_back(s);
      }
    }
  };
  separation(a, "cond-entropy");
  separation(b, "prior-score-variance");
  return out;
}

void write_proxy_csv(std::ostream& out, const std::vector<ProxyRow>& rows) {
  out << "step,group,n,cond_entropy_noise,cond_entropy_lambda,prior_score_variance_noise,"
         "prior_score_variance_lambda\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.group << ',' << r.n << ',' << format_csv_number(r.cond_entropy_noise)
        << ',' << format_csv_number(r.cond_entropy_lambda) << ','
        << format_csv_number(r.score_variance_noise) << ','
        << format_csv_number(r.score_variance_lambda) << '\n';
  }
}

void write_separation_csv(std::ostream& out, const std::vector<SeparationStat>& stats) {
  out << "proxy,group_a,group_b,n_a,n_b,mean_a,mean_b,pooled_se,z,separated\n";
  for (const auto& s : stats) {
    out << s.proxy << ',' << s.group_a << ',' << s.group_b << ',' << s.n_a << ',' << s.n_b << ','
        << format_csv_number(s.mean_a) << ',' << format_csv_number(s.mean_b) << ','
        << format_csv_number(s.pooled_se) << ',' << format_csv_number(s.z) << ','
        << (s.separated ? "true" : "false") << '\n';
  }
}

}  // namespace aram
