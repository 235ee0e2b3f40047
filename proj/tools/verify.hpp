#pragma once

// Batch property checks behind `mtopt verify`.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "mtopt/grad_core.hpp"

namespace mtopt::cli {

struct VerifyOptions {
  /// Multiplies every tolerance; 0 demands exact agreement.
  double tolerance_scale = 1.0;
  /// "pcgrad-sign" swaps in a PCGrad whose projection has the wrong sign.
  std::string inject_fault;
  std::uint64_t seed = 0;
};

struct PropertyResult {
  std::string name;
  bool pass = true;
  std::size_t cases = 0;
  std::string detail;
  std::optional<GradientSet<double>> counterexample;
};

std::vector<PropertyResult> run_verify(const VerifyOptions& opts);

Json gradient_set_json(const GradientSet<double>& gs);

}  // namespace mtopt::cli
