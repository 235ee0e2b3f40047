#pragma once

// Shared-trunk multilayer perceptron with one head per task.
//
// Parameter flattening order, used for every GradientSet row and checkpoint:
// layers in order, each as its weight matrix (out x in) in row-major order
// followed by its bias. The trunk is flattened on its own (the shared
// parameters); each head is flattened separately.

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtopt/grad_core.hpp"
#include "mtopt/random.hpp"

namespace mtopt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { Relu, Tanh, Identity };
enum class LossKind { CrossEntropy, Mse, L1 };
enum class DropoutMode { Train, Eval };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);
LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind k);

struct Layer {
  MatrixXd weight;  // out x in
  VectorXd bias;

  Eigen::Index inputs() const { return weight.cols(); }
  Eigen::Index outputs() const { return weight.rows(); }
  Eigen::Index param_count() const { return weight.size() + bias.size(); }
};

struct ModelSpec {
  int input_dim = 1;
  std::vector<int> trunk_hidden;  // hidden widths before the representation layer
  int repr_dim = 1;
  std::vector<int> head_hidden;  // hidden widths inside every head
  std::vector<int> head_outputs;  // one entry per task
  Activation activation = Activation::Relu;
  /// Dropout after each trunk layer; a single value applies to all of them.
  std::vector<double> dropout;
};

class MultiTaskModel {
 public:
  MultiTaskModel() = default;
  MultiTaskModel(std::vector<Layer> trunk, std::vector<std::vector<Layer>> heads, Activation act,
                 std::vector<double> dropout);

  /// Uniform fan-in initialization, U(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
  static MultiTaskModel init(const ModelSpec& spec, Rng& rng);

  int task_count() const { return static_cast<int>(heads_.size()); }
  Eigen::Index input_dim() const { return trunk_.front().inputs(); }
  Eigen::Index repr_dim() const { return trunk_.back().outputs(); }
  Activation activation() const { return activation_; }
  double dropout(std::size_t layer) const { return dropout_[layer]; }
  const std::vector<double>& dropout() const { return dropout_; }
  void set_dropout(std::vector<double> p);

  const std::vector<Layer>& trunk() const { return trunk_; }
  const std::vector<Layer>& head(int task) const { return heads_.at(static_cast<std::size_t>(task)); }
  std::vector<Layer>& mutable_trunk() { return trunk_; }
  std::vector<Layer>& mutable_head(int task) { return heads_.at(static_cast<std::size_t>(task)); }

  Eigen::Index trunk_param_count() const;
  Eigen::Index head_param_count(int task) const;
  VectorXd trunk_params() const;
  VectorXd head_params(int task) const;
  void set_trunk_params(const VectorXd& theta);
  void set_head_params(int task, const VectorXd& theta);

  bool all_finite() const;

 private:
  std::vector<Layer> trunk_;
  std::vector<std::vector<Layer>> heads_;
  Activation activation_ = Activation::Relu;
  std::vector<double> dropout_;
};

VectorXd flatten(const std::vector<Layer>& layers);
void unflatten(const VectorXd& theta, std::vector<Layer>& layers);

/// Inputs are b x d_in; every target matrix has b rows. Cross-entropy targets
/// are b x 1 class indices stored as doubles.
struct Batch {
  MatrixXd inputs;
  std::vector<MatrixXd> targets;

  Eigen::Index size() const { return inputs.rows(); }
  Batch rows(const std::vector<Eigen::Index>& idx) const;
};

struct LayerCache {
  MatrixXd input;
  MatrixXd pre;
  MatrixXd keep_scale;  // empty when no dropout was applied
};

struct TrunkCache {
  std::vector<LayerCache> layers;
  MatrixXd z;  // b x r, as fed to the heads

  /// z flattened sample-major (index n * r + k).
  VectorXd z_flat() const;
};

struct HeadCache {
  std::vector<LayerCache> layers;
  MatrixXd output;
};

struct ForwardResult {
  MatrixXd predictions;
  TrunkCache trunk;
  HeadCache head;
};

/// Trunk forward. In Train mode dropout masks are drawn from rng (required then).
TrunkCache forward_trunk(const MultiTaskModel& model, const MatrixXd& x, DropoutMode mode, Rng* rng);
HeadCache forward_head(const MultiTaskModel& model, int task, const MatrixXd& z);
ForwardResult forward(const MultiTaskModel& model, const MatrixXd& x, int task, DropoutMode mode,
                      Rng* rng);

/// Mean over the batch. Cross-entropy uses a stable log-sum-exp; mse sums squared
/// error over outputs before averaging; l1 likewise with absolute error.
double task_loss(const MatrixXd& predictions, const MatrixXd& targets, LossKind kind);
/// d loss / d predictions.
MatrixXd task_loss_grad(const MatrixXd& predictions, const MatrixXd& targets, LossKind kind);

struct BackwardCount {
  std::size_t trunk = 0;      // passes through the shared trunk
  std::size_t head_only = 0;  // passes that stop at the representation

  BackwardCount& operator+=(const BackwardCount& o) {
    trunk += o.trunk;
    head_only += o.head_only;
    return *this;
  }
};

struct PerTaskParamGrads {
  GradientSet<double> trunk;
  std::vector<VectorXd> heads;
  VectorXd losses;
  TrunkCache cache;
  BackwardCount count;
};

struct PerTaskReprGrads {
  GradientSet<double> repr;  // rows of length b * r, sample-major
  std::vector<VectorXd> heads;
  VectorXd losses;
  TrunkCache cache;
  BackwardCount count;
};

struct SummedGrads {
  VectorXd trunk;
  std::vector<VectorXd> heads;
  VectorXd losses;
  BackwardCount count;
};

/// Gradients of L_i + (lambda / 2m) ||theta_shared||^2 w.r.t. the trunk, one
/// full backward pass per task, all tasks sharing one dropout draw. Each head
/// gradient includes lambda * theta_head.
PerTaskParamGrads per_task_param_grads(const MultiTaskModel& model, const Batch& batch,
                                       const std::vector<LossKind>& kinds, double l2, DropoutMode mode,
                                       Rng* rng);

/// Gradients of each L_i w.r.t. the representation z: one head-only pass per task.
/// Head gradients include lambda * theta_head.
PerTaskReprGrads per_task_repr_grads(const MultiTaskModel& model, const Batch& batch,
                                     const std::vector<LossKind>& kinds, double l2, DropoutMode mode,
                                     Rng* rng);

/// (dz/dtheta)^T v for a flattened (sample-major) cotangent v: one trunk pass.
VectorXd jvp_trunk(const MultiTaskModel& model, const TrunkCache& cache, const VectorXd& v);

/// Gradient of sum_i L_i + (lambda / 2) ||theta_shared||^2 with a single backward pass.
SummedGrads summed_grads(const MultiTaskModel& model, const Batch& batch, const std::vector<LossKind>& kinds,
                         double l2, DropoutMode mode, Rng* rng);

enum class OptimizerKind { Sgd, Adam };

OptimizerKind optimizer_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Optimizer state for the trunk and every head.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const MultiTaskModel& model, AdamHyper hyper = {});

  /// Moves the trunk along the descent direction (theta <- theta + lr * direction
  /// for SGD) and each head against its gradient. Adam treats -direction as the
  /// trunk gradient. Throws DivergenceError if any parameter becomes non-finite.
  void step(MultiTaskModel& model, const VectorXd& trunk_direction, const std::vector<VectorXd>& head_grads,
            double lr);

  long steps() const { return t_; }

 private:
  VectorXd adam_delta(std::size_t slot, const VectorXd& grad);

  OptimizerKind kind_;
  AdamHyper hyper_;
  std::vector<VectorXd> m_;
  std::vector<VectorXd> v_;
  long t_ = 0;
};

/// Plain-text checkpoint: a header line, the architecture, then each parameter
/// block as "<name> <count>" followed by values printed with 17 significant digits.
void save_checkpoint(const MultiTaskModel& model, std::ostream& out);
MultiTaskModel load_checkpoint(std::istream& in);

}  // namespace mtopt
