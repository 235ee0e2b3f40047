#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <filesystem>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "io.hpp"
#include "mtopt/errors.hpp"
#include "report.hpp"

namespace mtopt::cli {

namespace fs = std::filesystem;

std::string resolve_output_dir(const std::string& flag, const std::string& configured) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("MTOPT_OUT");
  const std::string root = env && *env ? env : "";
  if (!configured.empty()) {
    if (fs::path(configured).is_absolute() || root.empty()) return configured;
    return (fs::path(root) / configured).string();
  }
  return root.empty() ? "mtopt_out" : root;
}

namespace {

struct Job {
  MethodSpec method;
  std::uint64_t seed = 0;
  double l2 = 0.0;
  std::vector<double> dropout;
  std::string run_id;
};

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

RunSummary run_job(const ExperimentConfig& cfg, const TaskSuite& suite, const Job& job, const std::string& dir) {
  TrainConfig tc = train_config_for(cfg, job.method, job.seed);
  tc.l2 = job.l2;
  tc.dropout = job.dropout;
  RunSummary s;
  s.run_id = job.run_id;
  s.method = job.method.label();
  s.seed = job.seed;
  s.l2 = job.l2;
  s.dropout = job.dropout.empty() ? 0.0 : job.dropout.front();
  s.csv = job.run_id + ".csv";

  RunRecord rec;
  if (suite.quadratic) {
    const VectorXd theta0 =
        Eigen::Map<const VectorXd>(cfg.suite.theta0.data(), static_cast<Eigen::Index>(cfg.suite.theta0.size()));
    rec = train_quadratic(*suite.quadratic, theta0, tc, job.run_id);
  } else {
    ModelSpec spec = model_spec_for(suite, cfg.model.trunk_hidden, cfg.model.repr_dim, cfg.model.activation);
    spec.head_hidden = cfg.model.head_hidden;
    rec = train(spec, suite, tc, job.run_id).record;
  }
  std::ostringstream csv;
  write_run_csv(rec, csv);
  write_atomic((fs::path(dir) / s.csv).string(), csv.str());

  s.selected_epoch = rec.selected_epoch;
  s.best_val = rec.epochs[static_cast<std::size_t>(rec.selected_epoch)].val_avg;
  s.test_avg = rec.test_avg;
  s.test_metrics.assign(rec.test_metrics.data(), rec.test_metrics.data() + rec.test_metrics.size());
  for (const auto& e : rec.epochs) s.epoch_seconds.push_back(e.seconds);
  s.backwards = rec.epochs.back().backwards;
  s.head_backwards = rec.epochs.back().head_backwards;
  return s;
}

/// Runs every job on a bounded pool. Without keep_going, no new job starts after a failure.
std::vector<RunSummary> execute(const ExperimentConfig& cfg, const TaskSuite& suite, const std::vector<Job>& jobs,
                                const std::string& dir, int workers, bool keep_going, std::ostream& err) {
  std::vector<std::optional<RunSummary>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex log_mu;
  std::exception_ptr usage_error;
  auto worker = [&] {
    for (;;) {
      if (stop.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        results[i] = run_job(cfg, suite, jobs[i], dir);
      } catch (const UsageError&) {
        std::lock_guard<std::mutex> lock(log_mu);
        if (!usage_error) usage_error = std::current_exception();
        stop.store(true);
      } catch (const std::exception& e) {
        // DivergenceError or a degenerate numerical state inside a run.
        RunSummary s;
        s.run_id = jobs[i].run_id;
        s.method = jobs[i].method.label();
        s.seed = jobs[i].seed;
        s.l2 = jobs[i].l2;
        s.dropout = jobs[i].dropout.empty() ? 0.0 : jobs[i].dropout.front();
        s.status = "diverged";
        s.error = e.what();
        s.best_val = s.test_avg = std::numeric_limits<double>::quiet_NaN();
        results[i] = std::move(s);
        {
          std::lock_guard<std::mutex> lock(log_mu);
          err << "run " << jobs[i].run_id << " diverged: " << e.what() << '\n';
        }
        if (!keep_going) stop.store(true);
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (usage_error) std::rethrow_exception(usage_error);
  std::vector<RunSummary> out;
  for (auto& r : results)
    if (r) out.push_back(std::move(*r));
  return out;
}

void write_manifest(const std::string& dir, const ExperimentConfig& cfg, const std::vector<RunSummary>& runs) {
  Json j;
  j["config"] = to_json(cfg);
  Json arr = Json::array();
  for (const auto& r : runs) arr.push_back(to_json(r));
  j["runs"] = arr;
  write_atomic((fs::path(dir) / "manifest.json").string(), j.dump(2) + "\n");
}

ExperimentConfig prepare(const RunOptions& opts) {
  if (opts.config.empty()) throw UsageError("--config is required");
  if (opts.jobs < 1) throw UsageError("--jobs must be >= 1");
  ExperimentConfig cfg = load_config(opts.config);
  if (opts.seed) cfg.seeds = {*opts.seed};
  if (!opts.methods.empty()) {
    std::vector<MethodSpec> chosen;
    for (const auto& name : opts.methods) {
      const Method m = method_from_string(name);
      bool found = false;
      for (const auto& spec : cfg.methods)
        if (spec.method == m) {
          chosen.push_back(spec);
          found = true;
        }
      if (!found) {
        MethodSpec spec;
        spec.method = m;
        spec.space = m == Method::SignAgnosticGradDrop ? Space::Representation : cfg.methods.front().space;
        if (m == Method::PcGrad) spec.space = Space::Parameter;
        chosen.push_back(spec);
      }
    }
    cfg.methods = std::move(chosen);
  }
  return cfg;
}

bool any_diverged(const std::vector<RunSummary>& runs) {
  return std::any_of(runs.begin(), runs.end(), [](const RunSummary& r) { return r.status != "ok"; });
}

}  // namespace

int cmd_run(const RunOptions& opts, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = prepare(opts);
  const std::string dir = resolve_output_dir(opts.out, cfg.output_dir);
  const TaskSuite suite = build_suite(cfg.suite);
  std::vector<Job> jobs;
  for (const auto& m : cfg.methods)
    for (std::uint64_t seed : cfg.seeds)
      jobs.push_back({m, seed, cfg.train.l2, cfg.train.dropout, m.label() + "-s" + std::to_string(seed)});
  ensure_dir(dir);
  const auto runs = execute(cfg, suite, jobs, dir, opts.jobs, opts.keep_going, err);
  write_manifest(dir, cfg, runs);
  for (const auto& r : runs)
    out << r.run_id << ' ' << r.status << " selected_epoch=" << r.selected_epoch << " test_avg=" << r.test_avg << '\n';
  out << "wrote " << runs.size() << " run(s) to " << dir << '\n';
  return any_diverged(runs) && !opts.keep_going ? kDiverged : kOk;
}

int cmd_sweep(const RunOptions& opts, const std::vector<double>& l2_flag, const std::vector<double>& dropout_flag,
              std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = prepare(opts);
  const std::vector<double> l2 = l2_flag.empty() ? cfg.sweep.l2 : l2_flag;
  const std::vector<double> dropout = dropout_flag.empty() ? cfg.sweep.dropout : dropout_flag;
  if (l2.empty() && dropout.empty()) throw UsageError("sweep: both grids are empty");
  const std::vector<double> l2_grid = l2.empty() ? std::vector<double>{cfg.train.l2} : l2;
  std::vector<std::vector<double>> drop_grid;
  if (dropout.empty()) drop_grid.push_back(cfg.train.dropout);
  for (double p : dropout) drop_grid.push_back(p > 0.0 ? std::vector<double>{p} : std::vector<double>{});
  for (double v : l2_grid)
    if (!(v >= 0.0)) throw UsageError("sweep: l2 values must be >= 0");
  for (double v : dropout)
    if (!(v >= 0.0 && v < 1.0)) throw UsageError("sweep: dropout values must lie in [0, 1)");
  if (cfg.suite.kind == "quadratics" && !dropout.empty()) throw UsageError("sweep: quadratics suites have no dropout");

  const std::string dir = resolve_output_dir(opts.out, cfg.output_dir);
  const TaskSuite suite = build_suite(cfg.suite);
  std::vector<Job> jobs;
  for (const auto& m : cfg.methods)
    for (double lam : l2_grid)
      for (const auto& dp : drop_grid)
        for (std::uint64_t seed : cfg.seeds) {
          const double p = dp.empty() ? 0.0 : dp.front();
          jobs.push_back({m, seed, lam, dp,
                          m.label() + "-l2_" + short_num(lam) + "-do_" + short_num(p) + "-s" + std::to_string(seed)});
        }
  ensure_dir(dir);
  const auto runs = execute(cfg, suite, jobs, dir, opts.jobs, opts.keep_going, err);
  write_manifest(dir, cfg, runs);
  const auto table = sweep_table(runs);
  write_atomic((fs::path(dir) / "sweep_summary.csv").string(), render_sweep_csv(table));
  out << render_sweep_text(table);
  out << "wrote " << runs.size() << " run(s) to " << dir << '\n';
  return any_diverged(runs) && !opts.keep_going ? kDiverged : kOk;
}

int cmd_verify(const VerifyOptions& opts, std::ostream& out, std::ostream& err) {
  const auto results = run_verify(opts);
  bool ok = true;
  for (const auto& r : results) {
    out << (r.pass ? "PASS " : "FAIL ") << r.name << " (" << r.cases << " cases)";
    if (!r.pass) out << ": " << r.detail;
    out << '\n';
    if (!r.pass) {
      ok = false;
      if (r.counterexample) err << "counterexample " << r.name << ": " << gradient_set_json(*r.counterexample).dump() << '\n';
    }
  }
  return ok ? kOk : kVerifyFailed;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_dir, std::ostream& out, std::ostream&) {
  if (dirs.empty()) throw UsageError("report: give at least one run directory");
  std::vector<RunSummary> runs;
  for (const auto& d : dirs) {
    auto r = load_manifest(d);
    runs.insert(runs.end(), r.begin(), r.end());
  }
  if (runs.empty()) throw UsageError("report: no run records found");
  const auto rows = summarize(runs);
  out << render_text(rows);
  if (!out_dir.empty()) write_atomic((fs::path(out_dir) / "report.csv").string(), render_csv(rows));
  return kOk;
}

}  // namespace mtopt::cli
