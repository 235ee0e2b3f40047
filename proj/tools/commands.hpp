#pragma once

// Subcommand implementations. Each returns the process exit code.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "verify.hpp"

namespace mtopt::cli {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kUsage = 2, kDiverged = 3 };

struct RunOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> methods;  // empty: as configured
  int jobs = 1;
  bool keep_going = false;
};

/// --out, else the config's output_dir (under $MTOPT_OUT when relative), else
/// $MTOPT_OUT, else ./mtopt_out.
std::string resolve_output_dir(const std::string& flag, const std::string& configured);

int cmd_run(const RunOptions& opts, std::ostream& out, std::ostream& err);
int cmd_sweep(const RunOptions& opts, const std::vector<double>& l2, const std::vector<double>& dropout,
              std::ostream& out, std::ostream& err);
int cmd_verify(const VerifyOptions& opts, std::ostream& out, std::ostream& err);
int cmd_report(const std::vector<std::string>& dirs, const std::string& out_dir, std::ostream& out,
               std::ostream& err);

}  // namespace mtopt::cli
