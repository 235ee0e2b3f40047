#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "mtopt/errors.hpp"

using namespace mtopt::cli;

int main(int argc, char** argv) {
  CLI::App app{"Multi-task optimizer experiments"};
  app.require_subcommand(1);

  RunOptions run_opts;
  std::uint64_t seed = 0;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", run_opts.config, "experiment config (JSON)")->required();
    sub->add_option("--out", run_opts.out, "output directory");
    sub->add_option("--seed", seed, "run only this seed");
    sub->add_option("--method", run_opts.methods, "run only these methods");
    sub->add_option("--jobs", run_opts.jobs, "parallel runs")->check(CLI::PositiveNumber);
    sub->add_flag("--keep-going", run_opts.keep_going, "continue after a diverged run");
  };

  auto* run = app.add_subcommand("run", "train every (method, seed) in a config");
  add_run_flags(run);

  auto* sweep = app.add_subcommand("sweep", "cross a config with an l2 x dropout grid");
  add_run_flags(sweep);
  std::vector<double> l2_grid, dropout_grid;
  sweep->add_option("--l2", l2_grid, "l2 values");
  sweep->add_option("--dropout", dropout_grid, "dropout values");

  auto* verify = app.add_subcommand("verify", "run the property suites");
  VerifyOptions vopts;
  verify->add_option("--tolerance-scale", vopts.tolerance_scale, "multiply every tolerance");
  verify->add_option("--inject-fault", vopts.inject_fault, "mutation check: pcgrad-sign");
  verify->add_option("--seed", vopts.seed, "generator seed");

  auto* report = app.add_subcommand("report", "summarize run directories");
  std::vector<std::string> dirs;
  std::string report_out;
  report->add_option("dirs", dirs, "run directories")->required();
  report->add_option("--out", report_out, "write report.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), kUsage);
  }

  try {
    for (auto* sub : {run, sweep})
      if (sub->parsed() && sub->count("--seed") > 0) run_opts.seed = seed;
    if (run->parsed()) return cmd_run(run_opts, std::cout, std::cerr);
    if (sweep->parsed()) return cmd_sweep(run_opts, l2_grid, dropout_grid, std::cout, std::cerr);
    if (verify->parsed()) return cmd_verify(vopts, std::cout, std::cerr);
    if (report->parsed()) return cmd_report(dirs, report_out, std::cout, std::cerr);
  } catch (const mtopt::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
