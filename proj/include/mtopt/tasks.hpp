#pragma once

// Seeded multi-task problem generators and the Multi-MNIST ingestion path.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtopt/grad_core.hpp"
#include "mtopt/net.hpp"

namespace mtopt {

/// L_i(theta) = scale_i * ||theta - center_i||^2.
struct QuadraticTasks {
  std::vector<VectorXd> centers;
  std::vector<double> scales;

  int task_count() const { return static_cast<int>(centers.size()); }
  Eigen::Index dim() const { return centers.front().size(); }
  VectorXd losses(const VectorXd& theta) const;
  GradientSet<double> grads(const VectorXd& theta) const;
  /// argmin sum_i L_i = sum_i scale_i c_i / sum_i scale_i.
  VectorXd unitary_optimum() const;
  /// Hessian of sum_i L_i, a multiple of the identity: 2 * sum_i scale_i.
  double summed_curvature() const;
};

enum class Split { Train, Val, Test };
Split split_from_string(const std::string& s);
std::string to_string(Split s);

struct TaskSuite {
  std::string name;
  std::vector<LossKind> kinds;
  /// Output width of each task head (class count for cross-entropy).
  std::vector<int> output_dims;
  Batch train;
  Batch val;
  Batch test;
  std::map<std::string, double> metadata;
  std::optional<QuadraticTasks> quadratic;

  int task_count() const { return static_cast<int>(kinds.size()); }
  Eigen::Index input_dim() const { return train.inputs.cols(); }
  const Batch& split(Split s) const;
};

TaskSuite make_conflicting_quadratics(const VectorXd& c1, const VectorXd& c2, double kappa);

struct BlobSpec {
  int tasks = 4;
  int classes = 3;
  int input_dim = 8;
  int samples = 1000;
  double separation = 6.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;
};

/// Shared Gaussian-mixture inputs over 2k unit-variance clusters whose centers are
/// N(0, I) draws times `separation`. Every task maps clusters to classes with its
/// own random permutation (two clusters per class), so the tasks disagree on which
/// clusters belong together. With probability `label_noise` a label is replaced by
/// a uniform class, giving a Bayes accuracy of (1 - noise) + noise / k.
TaskSuite make_blob_classification(const BlobSpec& spec);

struct RegressionSpec {
  double ratio = 10.0;
  int input_dim = 8;
  int samples = 600;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Two linear regression tasks with equal-norm weight vectors; the second task's
/// targets are multiplied by sqrt(ratio), so its loss scale is `ratio` times the first.
TaskSuite make_scale_imbalanced_regression(const RegressionSpec& spec);

/// Raw IDX contents. Images are count x (rows * cols) bytes.
struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file_bytes(const std::string& path);

struct MultiMnistSpec {
  int canvas = 32;
  int offset = 4;
  std::uint64_t seed = 0;
  /// Source images used for training pairs; the remainder forms validation/test.
  std::uint32_t train_sources = 50000;
};

/// Overlays `a` at (0, 0) and `b` at (offset, offset) on a canvas x canvas image by
/// elementwise max and rescales to [0, 1]. Output is row-major.
VectorXd compose_pair(const std::uint8_t* a, const std::uint8_t* b, int rows, int cols, int canvas, int offset);

/// Builds the two-task Multi-MNIST suite. Each source image is paired with a
/// uniformly drawn partner from the same split; task 0 is the top-left digit and
/// task 1 the bottom-right one. Sources [0, train_sources) give the training split
/// (scaled down proportionally for files with fewer than 60000 images) and the
/// remaining sources are halved into validation and test.
TaskSuite make_multimnist(const IdxImages& images, const std::vector<std::uint8_t>& labels,
                          const MultiMnistSpec& spec);
TaskSuite load_multimnist(const std::string& image_path, const std::string& label_path,
                          const MultiMnistSpec& spec);

/// Versioned binary serialization ("MTSU", version, then little-endian fields).
void write_suite(const TaskSuite& suite, std::ostream& out);
TaskSuite read_suite(std::istream& in);
std::vector<std::uint8_t> suite_bytes(const TaskSuite& suite);

}  // namespace mtopt
