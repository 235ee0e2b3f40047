#pragma once

// Run summaries, manifests and the aggregate tables printed by `report` and `sweep`.

#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"

namespace mtopt::cli {

struct RunSummary {
  std::string run_id;
  std::string method;  // MethodSpec::label()
  std::uint64_t seed = 0;
  double l2 = 0.0;
  double dropout = 0.0;
  std::string status = "ok";  // ok | diverged
  std::string error;
  int selected_epoch = 0;
  double best_val = 0.0;
  double test_avg = 0.0;
  std::vector<double> test_metrics;
  std::vector<double> epoch_seconds;
  std::uint64_t backwards = 0;
  std::uint64_t head_backwards = 0;
  std::string csv;  // file name relative to the run directory
};

Json to_json(const RunSummary& r);
RunSummary summary_from_json(const Json& j);

/// Reads <dir>/manifest.json.
std::vector<RunSummary> load_manifest(const std::string& dir);

struct Interval {
  double mean = 0.0;
  double se = 0.0;
  double half_width = 0.0;  // 1.96 * se
  std::size_t n = 0;
};

/// Mean and normal-approximation 95% interval with the sample standard deviation.
/// Values are summed in sorted order so the result does not depend on input order.
Interval mean_ci(std::vector<double> values);
/// Quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

struct MethodReport {
  std::string method;
  Interval test;
  double seconds_q1 = 0.0;
  double seconds_q3 = 0.0;
  std::uint64_t backwards = 0;
  std::uint64_t head_backwards = 0;
  std::size_t diverged = 0;
};

/// One row per method label, sorted by label; diverged runs only count toward `diverged`.
std::vector<MethodReport> summarize(const std::vector<RunSummary>& runs);
std::string render_text(const std::vector<MethodReport>& rows);
std::string render_csv(const std::vector<MethodReport>& rows);

struct SweepRow {
  std::string method;
  double l2 = 0.0;
  double dropout = 0.0;
  Interval val;
  Interval test;
  bool best = false;  // highest mean validation metric for this method
};

/// Groups runs by (method, l2, dropout) and marks each method's best cell.
std::vector<SweepRow> sweep_table(const std::vector<RunSummary>& runs);
std::string render_sweep_text(const std::vector<SweepRow>& rows);
std::string render_sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace mtopt::cli
