#pragma once

// Stationarity and tragic-triad diagnostics for trained models and runs.

#include <iosfwd>
#include <string>
#include <vector>

#include "mtopt/certificates.hpp"
#include "mtopt/tasks.hpp"
#include "mtopt/trainer.hpp"

namespace mtopt {

/// Per-task trunk gradients of a model (eval mode, no L2) as a function of the trunk parameters.
PerTaskGradientFn<double> model_gradient_fn(const MultiTaskModel& model, const Batch& batch,
                                            const std::vector<LossKind>& kinds);

TriadReport<double> triad_report(const MultiTaskModel& model, const Batch& batch, const std::vector<LossKind>& kinds,
                                 double eps);
TriadReport<double> triad_report(const QuadraticTasks& tasks, const VectorXd& theta, double eps);

/// Stationarity certificates of a model's per-task trunk gradients on a batch.
StationarityReport<double> model_stationarity(const MultiTaskModel& model, const Batch& batch,
                                              const std::vector<LossKind>& kinds,
                                              double tolerance = kDefaultCertificateTolerance);

/// Per-epoch means of the ||sum_i grad L_i|| samples. Throws ValidationError if an
/// epoch has no samples.
std::vector<double> undertraining_curve(const RunRecord& record);

/// CSV rows keyed by (run_id, epoch): run_id, epoch, update_norm.
void write_undertraining_csv(const std::vector<RunRecord>& records, std::ostream& out);

/// CSV row keyed by (run_id, epoch) with every certificate and verdict.
std::string stationarity_csv_header();
std::string stationarity_csv_row(const std::string& run_id, int epoch, const StationarityReport<double>& r);

}  // namespace mtopt
