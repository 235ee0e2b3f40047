#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "commands.hpp"
#include "config.hpp"
#include "io.hpp"
#include "report.hpp"

using namespace mtopt;
using namespace mtopt::cli;
namespace fs = std::filesystem;

namespace {

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mtopt_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& leaf = "") const { return (path / leaf).string(); }
};

Json small_blob_config() {
  return Json::parse(R"({
    "suite": {"kind": "blobs", "tasks": 2, "classes": 3, "input_dim": 4, "samples": 200, "seed": 1},
    "model": {"trunk_hidden": [8], "repr_dim": 4},
    "train": {"methods": ["unitary", "mgda"], "epochs": 2, "batch_size": 32, "lr": 0.01},
    "seeds": [0, 1, 2]
  })");
}

std::string write_config(const TempDir& d, const Json& j, const std::string& name = "config.json") {
  write_atomic(d.str(name), j.dump(2));
  return d.str(name);
}

std::vector<std::string> files_with_ext(const std::string& dir, const std::string& ext) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::string drop_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

/// Runs the built binary and returns its exit status.
int run_binary(const std::string& args, const std::string& stdout_file = "/dev/null",
               const std::string& stderr_file = "/dev/null") {
  const std::string cmd = std::string(MTOPT_BINARY) + " " + args + " >" + stdout_file + " 2>" + stderr_file;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunSummary summary(const std::string& method, double test, std::uint64_t seed) {
  RunSummary r;
  r.run_id = method + "-s" + std::to_string(seed);
  r.method = method;
  r.seed = seed;
  r.test_avg = test;
  r.best_val = test;
  r.epoch_seconds = {0.1 * static_cast<double>(seed + 1), 0.2, 0.3};
  r.backwards = 10 * (seed + 1);
  return r;
}

}  // namespace

TEST(Config, RoundTripIsIdentity) {
  std::vector<Json> configs = {small_blob_config(), Json::parse(R"({
    "suite": {"kind": "quadratics", "c1": [1, 0], "c2": [-1, 0.5], "kappa": 2.5, "theta0": [0.3, 1]},
    "train": {"methods": ["mgda", {"method": "pcgrad"}], "optimizer": "sgd", "lr": 0.05, "steps_per_epoch": 20},
    "repetitions": 2,
    "output_dir": "quad"
  })"),
                               Json::parse(R"({
    "suite": {"kind": "regression", "ratio": 100, "samples": 300},
    "model": {"trunk_hidden": [16, 8], "repr_dim": 8, "head_hidden": [4], "activation": "tanh"},
    "train": {"space": "representation", "methods": ["imtl_g", {"method": "graddrop", "space": "parameter"}],
              "imtl_l": true, "l2": 0.001, "dropout": [0.5], "rlw_distribution": "normal", "qp": {"max_iter": 50}},
    "sweep": {"l2": [0, 0.0001], "dropout": [0, 0.5]}
  })")};
  for (const auto& j : configs) {
    const ExperimentConfig a = parse_config(j);
    const Json once = to_json(a);
    const ExperimentConfig b = parse_config(once);
    EXPECT_EQ(to_json(b), once);
    EXPECT_EQ(b.methods.size(), a.methods.size());
    EXPECT_EQ(b.seeds, a.seeds);
  }
}

TEST(Config, UnknownKeysAndBadValuesAreUsageErrors) {
  Json j = small_blob_config();
  j["train"]["learning_rate"] = 0.1;
  try {
    parse_config(j);
    FAIL() << "expected usage error";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  j = small_blob_config();
  j["suite"]["kind"] = "cifar";
  EXPECT_THROW(parse_config(j), UsageError);
  j = small_blob_config();
  j["train"]["methods"] = Json::array({"pcgrad"});
  j["train"]["space"] = "representation";
  EXPECT_THROW(parse_config(j), UsageError);
  j = small_blob_config();
  j["train"]["epochs"] = "ten";
  EXPECT_THROW(parse_config(j), UsageError);
  j = small_blob_config();
  j["repetitions"] = 2;
  EXPECT_THROW(parse_config(j), UsageError);
}

TEST(Report, MeanCiHandExample) {
  const Interval i = mean_ci({0.9, 0.9, 0.96});
  EXPECT_NEAR(i.mean, 0.92, 1e-15);
  EXPECT_NEAR(i.se, 0.02, 1e-15);
  EXPECT_NEAR(i.half_width, 0.0392, 1e-15);
  EXPECT_EQ(i.n, 3u);
  EXPECT_EQ(mean_ci({0.5, 0.5}).half_width, 0.0);
  const Interval one = mean_ci({0.7});
  EXPECT_EQ(one.n, 1u);
  EXPECT_TRUE(std::isnan(one.half_width));
}

TEST(Report, QuantileInterpolates) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.75), 7.0);
}

TEST(Report, SingleRunSaysCiNotAvailable) {
  const auto text = render_text(summarize({summary("unitary", 0.9, 0)}));
  EXPECT_NE(text.find("n=1, CI n/a"), std::string::npos) << text;
}

TEST(Report, PermutationInvariant) {
  std::vector<RunSummary> runs;
  for (std::uint64_t s = 0; s < 5; ++s) {
    runs.push_back(summary("unitary", 0.9 + 0.01 * static_cast<double>(s), s));
    runs.push_back(summary("mgda", 0.91 - 0.013 * static_cast<double>(s), s));
  }
  const auto text = render_text(summarize(runs));
  const auto csv = render_csv(summarize(runs));
  std::mt19937 g(3);
  for (int k = 0; k < 10; ++k) {
    std::shuffle(runs.begin(), runs.end(), g);
    ASSERT_EQ(render_text(summarize(runs)), text);
    ASSERT_EQ(render_csv(summarize(runs)), csv);
  }
}

TEST(Report, DivergedRunsAreCountedNotAveraged) {
  auto bad = summary("mgda", 0.0, 9);
  bad.status = "diverged";
  const auto rows = summarize({summary("mgda", 0.8, 0), summary("mgda", 0.9, 1), bad});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].diverged, 1u);
  EXPECT_EQ(rows[0].test.n, 2u);
  EXPECT_NEAR(rows[0].test.mean, 0.85, 1e-15);
}

TEST(OutputDir, Precedence) {
  ::setenv("MTOPT_OUT", "/tmp/root", 1);
  EXPECT_EQ(resolve_output_dir("flag", "cfg"), "flag");
  EXPECT_EQ(resolve_output_dir("", "cfg"), "/tmp/root/cfg");
  EXPECT_EQ(resolve_output_dir("", "/abs"), "/abs");
  EXPECT_EQ(resolve_output_dir("", ""), "/tmp/root");
  ::unsetenv("MTOPT_OUT");
  EXPECT_EQ(resolve_output_dir("", "cfg"), "cfg");
  EXPECT_EQ(resolve_output_dir("", ""), "mtopt_out");
}

TEST(Io, AtomicWriteLeavesOnlyTarget) {
  TempDir d;
  write_atomic(d.str("a.txt"), "one");
  write_atomic(d.str("a.txt"), "two");
  EXPECT_EQ(read_text(d.str("a.txt")), "two");
  EXPECT_EQ(std::distance(fs::directory_iterator(d.path), fs::directory_iterator{}), 1);
}

TEST(CmdRun, WritesOneCsvPerRunAndAManifest) {
  TempDir d;
  RunOptions opts;
  opts.config = write_config(d, small_blob_config());
  opts.out = d.str("runs");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_run(opts, out, err), kOk) << err.str();
  const auto csvs = files_with_ext(opts.out, ".csv");
  EXPECT_EQ(csvs.size(), 6u);
  EXPECT_TRUE(fs::exists(d.str("runs/manifest.json")));
  const auto runs = load_manifest(opts.out);
  ASSERT_EQ(runs.size(), 6u);
  for (const auto& r : runs) {
    EXPECT_EQ(r.status, "ok");
    EXPECT_TRUE(fs::exists(fs::path(opts.out) / r.csv));
  }
}

TEST(CmdRun, RepeatedRunsGiveIdenticalCsvBytesApartFromSeconds) {
  TempDir d;
  RunOptions opts;
  opts.config = write_config(d, small_blob_config());
  opts.out = d.str("a");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_run(opts, out, err), kOk);
  opts.out = d.str("b");
  opts.jobs = 3;
  ASSERT_EQ(cmd_run(opts, out, err), kOk);
  for (const auto& f : files_with_ext(d.str("a"), ".csv")) {
    const auto a = read_text(d.str("a/" + f)), b = read_text(d.str("b/" + f));
    EXPECT_EQ(drop_last_column(a), drop_last_column(b)) << f;
  }
}

TEST(CmdRun, MethodAndSeedOverrides) {
  TempDir d;
  RunOptions opts;
  opts.config = write_config(d, small_blob_config());
  opts.out = d.str("runs");
  opts.methods = {"mgda"};
  opts.seed = 5;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_run(opts, out, err), kOk);
  const auto runs = load_manifest(opts.out);
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_EQ(runs[0].method, "mgda");
  EXPECT_EQ(runs[0].seed, 5u);
}

TEST(CmdRun, DivergenceExitsThreeUnlessKeepGoing) {
  TempDir d;
  const Json j = Json::parse(R"({
    "suite": {"kind": "quadratics", "c1": [1, 0], "c2": [-1, 0], "kappa": 1, "theta0": [0, 1]},
    "train": {"methods": ["unitary"], "optimizer": "sgd", "lr": 10, "epochs": 10},
    "seeds": [0, 1]
  })");
  RunOptions opts;
  opts.config = write_config(d, j);
  opts.out = d.str("runs");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_run(opts, out, err), kDiverged);
  EXPECT_NE(err.str().find("unitary-s0"), std::string::npos) << err.str();
  opts.keep_going = true;
  EXPECT_EQ(cmd_run(opts, out, err), kOk);
  const auto runs = load_manifest(opts.out);
  ASSERT_EQ(runs.size(), 2u);
  for (const auto& r : runs) EXPECT_EQ(r.status, "diverged");
}

TEST(CmdSweep, GridTimesSeeds) {
  TempDir d;
  Json j = small_blob_config();
  j["train"]["methods"] = Json::array({"unitary"});
  j["seeds"] = Json::array({0, 1});
  RunOptions opts;
  opts.config = write_config(d, j);
  opts.out = d.str("sweep");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_sweep(opts, {0.0, 1e-4, 1e-3}, {}, out, err), kOk) << err.str();
  EXPECT_EQ(files_with_ext(opts.out, ".csv").size(), 6u + 1u);  // runs plus sweep_summary.csv
  const auto runs = load_manifest(opts.out);
  EXPECT_EQ(runs.size(), 6u);
  const auto table = sweep_table(runs);
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(std::count_if(table.begin(), table.end(), [](const SweepRow& r) { return r.best; }), 1);
  for (const auto& row : table) EXPECT_EQ(row.val.n, 2u);
}

TEST(CmdSweep, EmptyGridIsUsageError) {
  TempDir d;
  RunOptions opts;
  opts.config = write_config(d, small_blob_config());
  opts.out = d.str("sweep");
  std::ostringstream out, err;
  EXPECT_THROW(cmd_sweep(opts, {}, {}, out, err), UsageError);
}

TEST(CmdReport, RequiresRecords) {
  TempDir d;
  std::ostringstream out, err;
  EXPECT_THROW(cmd_report({}, "", out, err), UsageError);
  EXPECT_THROW(cmd_report({d.str()}, "", out, err), UsageError);
}

TEST(Binary, ExitCodes) {
  TempDir d;
  const std::string cfg = write_config(d, small_blob_config());
  EXPECT_EQ(run_binary("verify"), 0);
  EXPECT_EQ(run_binary("verify --tolerance-scale 0"), 1);
  EXPECT_EQ(run_binary("--bogus"), 2);
  EXPECT_EQ(run_binary("run"), 2);
  EXPECT_EQ(run_binary("run --config " + d.str("missing.json")), 2);
  Json bad = small_blob_config();
  bad["typo"] = 1;
  EXPECT_EQ(run_binary("run --config " + write_config(d, bad, "bad.json")), 2);
  EXPECT_EQ(run_binary("sweep --config " + cfg + " --out " + d.str("s")), 2);
  EXPECT_EQ(run_binary("report " + d.str("nothing_here")), 2);

  EXPECT_EQ(run_binary("run --config " + cfg + " --out " + d.str("r") + " --method unitary --seed 0"), 0);
  EXPECT_EQ(run_binary("report " + d.str("r") + " --out " + d.str("r"), d.str("report.txt")), 0);
  EXPECT_TRUE(fs::exists(d.str("r/report.csv")));
  EXPECT_NE(read_text(d.str("report.txt")).find("n=1, CI n/a"), std::string::npos);
}

TEST(Binary, VerifyFaultInjectionDumpsCounterexample) {
  TempDir d;
  EXPECT_EQ(run_binary("verify --inject-fault pcgrad-sign", d.str("out.txt"), d.str("err.txt")), 1);
  const auto out = read_text(d.str("out.txt"));
  const auto err = read_text(d.str("err.txt"));
  EXPECT_NE(out.find("FAIL pcgrad.rescaling_identity"), std::string::npos) << out;
  EXPECT_NE(err.find("counterexample pcgrad.rescaling_identity: {\"space\":\"parameter\",\"rows\":"),
            std::string::npos)
      << err;
  EXPECT_EQ(out.find("FAIL minnorm"), std::string::npos);
}

TEST(Config, ShippedConfigsParse) {
  int count = 0;
  for (const auto& e : fs::directory_iterator(fs::path(MTOPT_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".json") continue;
    ++count;
    EXPECT_NO_THROW(parse_config(Json::parse(read_text(e.path().string())))) << e.path();
  }
  EXPECT_GE(count, 3);
}
