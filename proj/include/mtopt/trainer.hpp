#pragma once

// Multi-task training loop: per-task gradients, aggregation, optimizer step,
// validation-based model selection.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtopt/aggregators.hpp"
#include "mtopt/net.hpp"
#include "mtopt/tasks.hpp"

namespace mtopt {

enum class Method { Unitary, Mgda, ImtlG, PcGrad, GradDrop, SignAgnosticGradDrop, Rlw, Rgd };

Method method_from_string(const std::string& s);
std::string to_string(Method m);
std::vector<Method> all_methods();
Space space_from_string(const std::string& s);
RlwDistribution rlw_from_string(const std::string& s);
std::string to_string(RlwDistribution d);

/// Generator streams split from the run seed.
enum class Stream : std::uint64_t { DataOrder = 0, Dropout = 1, Aggregator = 2, Init = 3 };

struct TrainConfig {
  Method method = Method::Unitary;
  Space space = Space::Parameter;
  bool mgda_rescale = false;
  bool imtl_l = false;
  double imtl_l_step_size = 0.1;
  bool graddrop_flip = false;
  RlwDistribution rlw_distribution = RlwDistribution::Dirichlet;
  double rgd_p = 0.5;
  double sign_agnostic_p = 0.5;
  MinNormConfig qp;

  int epochs = 10;
  int batch_size = 256;
  double lr = 1e-2;
  double lr_decay = 0.95;  // per epoch
  double l2 = 0.0;
  std::vector<double> dropout;  // empty: no dropout
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  int eval_every = 1;  // epochs between validation passes
  int norm_every = 1;  // updates between ||sum grad L_i|| samples
  /// Unitary uses a single backward pass over the summed loss. When false it
  /// takes the per-task path like every other method.
  bool unitary_fast_path = true;
  /// Updates per epoch for analytic (quadratic) suites.
  int steps_per_epoch = 100;

  /// Throws ValidationError on invalid values or method/space combinations.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  VectorXd train_losses;  // per task, full training split in eval mode
  double total_loss = 0.0;
  VectorXd val_metrics;  // per task, higher is better
  double val_avg = 0.0;
  double update_norm = 0.0;  // mean ||sum_i grad L_i|| over the epoch's samples
  std::uint64_t backwards = 0;       // cumulative trunk backward passes
  std::uint64_t head_backwards = 0;  // cumulative head-only backward passes
  double seconds = 0.0;              // gradient + aggregation + step time for this epoch
  std::uint64_t stalls = 0;          // updates with a zero trunk direction
};

struct RunRecord {
  std::string run_id;
  Method method = Method::Unitary;
  int task_count = 0;
  std::vector<EpochRecord> epochs;
  std::vector<std::vector<double>> norm_samples;  // per epoch
  int selected_epoch = 0;
  VectorXd test_metrics;
  double test_avg = 0.0;
  /// Final shared parameters (quadratic suites only).
  std::optional<VectorXd> final_theta;
};

struct EvalResult {
  VectorXd losses;
  VectorXd metrics;  // accuracy for cross-entropy, negated loss otherwise
  double average = 0.0;
};

/// Eval-mode metrics on one split.
EvalResult evaluate(const MultiTaskModel& model, const TaskSuite& suite, Split split);

/// Epoch index with the largest val_avg; ties go to the earliest epoch.
int select_model(const std::vector<EpochRecord>& epochs);

/// What a single update did, for tests and cost accounting.
struct StepReport {
  VectorXd trunk_direction;
  std::vector<VectorXd> head_grads;
  VectorXd losses;
  BackwardCount count;
  double sum_grad_norm = 0.0;  // ||sum_i grad L_i|| before aggregation and L2
  bool stalled = false;
};

struct LoopState {
  Rng dropout_rng;
  Rng aggregator_rng;
  LossScaleState loss_scales;
};

LoopState make_loop_state(const TrainConfig& cfg, int tasks);

/// Computes the trunk direction and head gradients for one mini-batch without
/// stepping. `measure_norm` adds the ||sum_i grad L_i|| sample (one extra trunk
/// pass for representation-space methods, not counted).
StepReport compute_step(const MultiTaskModel& model, const Batch& batch, const std::vector<LossKind>& kinds,
                        const TrainConfig& cfg, LoopState& state, bool measure_norm);

/// Aggregates a gradient set with the configured parameter-space method.
AggregateUpdate<double> aggregate(const GradientSet<double>& gs, const VectorXd& losses, const TrainConfig& cfg,
                                  Rng& rng);

struct TrainResult {
  RunRecord record;
  MultiTaskModel model;     // after the last epoch
  MultiTaskModel selected;  // at the selected epoch
};

/// Trains a freshly initialized model. Throws DivergenceError naming the global step.
TrainResult train(const ModelSpec& spec, const TaskSuite& suite, const TrainConfig& cfg,
                  const std::string& run_id = "run");
/// Continues training an existing model.
TrainResult train(MultiTaskModel model, const TaskSuite& suite, const TrainConfig& cfg,
                  const std::string& run_id = "run");

/// Plain gradient descent on the shared parameters of an analytic suite. Only
/// parameter-space methods and SGD are meaningful here. Validation metrics are
/// the negated task losses.
RunRecord train_quadratic(const QuadraticTasks& tasks, const VectorXd& theta0, const TrainConfig& cfg,
                          const std::string& run_id = "run");

/// ModelSpec matching a suite: input width and one head per task.
ModelSpec model_spec_for(const TaskSuite& suite, std::vector<int> trunk_hidden, int repr_dim,
                         Activation act = Activation::Relu);

/// CSV columns: epoch, loss_task_<i>..., loss_total, val_task_<i>..., val_avg,
/// update_norm, backwards, head_backwards, stalls, seconds.
void write_run_csv(const RunRecord& record, std::ostream& out);
std::vector<std::string> run_csv_header(int tasks);

}  // namespace mtopt
