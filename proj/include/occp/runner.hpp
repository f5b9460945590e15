#pragma once

#include "occp/sim_world.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace occp {

/// One dotted config key and the values it takes, from "key=v1,v2,...".
struct Sweep {
  std::string key;
  std::vector<std::string> values;
};

/// Throws ConfigError on a malformed descriptor or unknown key.
Sweep parse_sweep(const std::string& text);

struct RunSpec {
  ScenarioConfig base;
  std::optional<RunMode> mode;        // overrides base.mode
  std::optional<std::uint64_t> seed;  // overrides base.seed as the seed base
  int trials = 1;
  std::optional<Sweep> sweep;
  bool strict = false;
  bool trace_admm = false;
  bool dump_risk = false;
  std::string out_dir;  // empty: nothing is written
  int threads = 0;      // 0: hardware concurrency, capped by OCCP_THREADS
};

struct TrialResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunMetrics metrics;
  std::vector<CycleTrace> trace;
};

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};

/// Trial statistics; durations and velocities use completed trials only.
struct Aggregate {
  int trials = 0;
  int completed = 0;
  int collisions = 0;
  MeanStd task_duration, v_min, v_mean, v_max;
  MeanStd solve_mean, solve_max, solve_min;
  MeanStd cpu_mean, cpu_max;
};

Aggregate aggregate(const std::vector<RunMetrics>& trials);

struct PointResult {
  std::string label;  // "key=value", or "base" without a sweep
  ScenarioConfig config;
  std::vector<TrialResult> trials;
  Aggregate agg;
};

struct RunOutcome {
  int exit_code = 0;  // 0 ok, 1 collision in strict aware mode, 2 failed trial
  std::vector<PointResult> points;
};

/// Worker count for `jobs` jobs: `requested` (or the hardware concurrency when
/// 0), capped by the OCCP_THREADS environment variable.
int worker_count(int requested, int jobs);

/// Runs every sweep point for `trials` seeds (seed base + i). Trials run on a
/// worker pool; results are stored by index, so the outcome does not depend on
/// completion order. With an output directory, writes per-trial traces and
/// plot data, metrics.json and summary.txt.
RunOutcome run(const RunSpec& spec);

/// Human-readable table with the columns of the comparison table.
std::string summary_table(const RunOutcome& out, RunMode mode);
std::string metrics_json(const RunOutcome& out, const RunSpec& spec);

void write_trace_csv(std::ostream& os, const std::vector<CycleTrace>& trace);
void write_admm_csv(std::ostream& os, const std::vector<AdmmTraceRow>& rows);
void write_risk_csv(std::ostream& os, const std::vector<RiskField>& fields);
/// Both trajectories' speed profiles of planned cycle `cycle`, columns
/// k,t,v_explore,v_fallback. Header only when the cycle does not exist.
void write_velocity_profile_csv(std::ostream& os, const std::vector<CycleTrace>& trace, int cycle,
                                double dt);
/// One row per planned cycle: cycle,t,solve_ms,solve_cpu_ms,iters.
void write_solve_time_csv(std::ostream& os, const std::vector<CycleTrace>& trace);

}  // namespace occp
