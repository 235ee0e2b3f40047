#pragma once

// Experiment configuration files (JSON). Unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtopt/tasks.hpp"
#include "mtopt/trainer.hpp"

namespace mtopt::cli {

using Json = nlohmann::ordered_json;

struct SuiteConfig {
  std::string kind = "blobs";  // blobs | regression | quadratics | multimnist
  BlobSpec blobs;
  RegressionSpec regression;
  std::vector<double> c1{1.0, 0.0};
  std::vector<double> c2{-1.0, 0.0};
  double kappa = 1.0;
  std::vector<double> theta0{0.0, 1.0};
  std::string images;
  std::string labels;
  MultiMnistSpec multimnist;
};

struct ModelConfig {
  std::vector<int> trunk_hidden{32};
  int repr_dim = 16;
  std::vector<int> head_hidden;
  Activation activation = Activation::Relu;
};

struct MethodSpec {
  Method method = Method::Unitary;
  Space space = Space::Parameter;

  /// "pcgrad", or "graddrop-repr" for representation-space runs.
  std::string label() const;
};

struct SweepConfig {
  std::vector<double> l2;
  std::vector<double> dropout;
};

struct ExperimentConfig {
  SuiteConfig suite;
  ModelConfig model;
  TrainConfig train;  // method/space fields are taken from `methods`
  std::vector<MethodSpec> methods{MethodSpec{}};
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir;
  SweepConfig sweep;
};

/// Throws UsageError with the offending key path on any schema violation.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::string& path);
Json to_json(const ExperimentConfig& cfg);

/// Builds the task suite a config describes.
TaskSuite build_suite(const SuiteConfig& s);

/// TrainConfig for one method and seed.
TrainConfig train_config_for(const ExperimentConfig& cfg, const MethodSpec& m, std::uint64_t seed);

}  // namespace mtopt::cli
