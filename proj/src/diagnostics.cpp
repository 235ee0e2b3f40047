#include "mtopt/diagnostics.hpp"

#include <cstdio>
#include <ostream>

#include "mtopt/errors.hpp"

namespace mtopt {

PerTaskGradientFn<double> model_gradient_fn(const MultiTaskModel& model, const Batch& batch,
                                            const std::vector<LossKind>& kinds) {
  return [m = MultiTaskModel(model), batch, kinds](const VectorXd& theta) mutable {
    m.set_trunk_params(theta);
    return per_task_param_grads(m, batch, kinds, 0.0, DropoutMode::Eval, nullptr).trunk;
  };
}

TriadReport<double> triad_report(const MultiTaskModel& model, const Batch& batch, const std::vector<LossKind>& kinds,
                                 double eps) {
  return triad_report<double>(model_gradient_fn(model, batch, kinds), model.trunk_params(), eps);
}

TriadReport<double> triad_report(const QuadraticTasks& tasks, const VectorXd& theta, double eps) {
  return triad_report<double>([&tasks](const VectorXd& t) { return tasks.grads(t); }, theta, eps);
}

StationarityReport<double> model_stationarity(const MultiTaskModel& model, const Batch& batch,
                                              const std::vector<LossKind>& kinds, double tolerance) {
  return stationarity_report(per_task_param_grads(model, batch, kinds, 0.0, DropoutMode::Eval, nullptr).trunk,
                             tolerance);
}

std::vector<double> undertraining_curve(const RunRecord& record) {
  std::vector<double> out;
  for (std::size_t e = 0; e < record.norm_samples.size(); ++e) {
    const auto& s = record.norm_samples[e];
    if (s.empty()) throw ValidationError("undertraining_curve: epoch " + std::to_string(e) + " has no norm samples");
    double acc = 0.0;
    for (double v : s) acc += v;
    out.push_back(acc / static_cast<double>(s.size()));
  }
  if (out.empty()) throw ValidationError("undertraining_curve: record has no norm samples");
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_undertraining_csv(const std::vector<RunRecord>& records, std::ostream& out) {
  out << "run_id,epoch,update_norm\n";
  for (const auto& r : records) {
    const auto curve = undertraining_curve(r);
    for (std::size_t e = 0; e < curve.size(); ++e) out << r.run_id << ',' << e << ',' << fmt(curve[e]) << '\n';
  }
}

std::string stationarity_csv_header() {
  return "run_id,epoch,unitary_norm,convex_cert,affine_cert,joint_cert,tolerance,unitary_stationary,"
         "pareto_stationary,affine_stationary,joint_minimum";
}

std::string stationarity_csv_row(const std::string& run_id, int epoch, const StationarityReport<double>& r) {
  return run_id + ',' + std::to_string(epoch) + ',' + fmt(r.unitary_norm) + ',' + fmt(r.convex_cert) + ',' +
         fmt(r.affine_cert) + ',' + fmt(r.joint_cert) + ',' + fmt(r.tolerance) + ',' +
         (r.unitary_stationary() ? "1" : "0") + ',' + (r.pareto_stationary() ? "1" : "0") + ',' +
         (r.affine_stationary() ? "1" : "0") + ',' + (r.joint_minimum() ? "1" : "0");
}

}  // namespace mtopt
