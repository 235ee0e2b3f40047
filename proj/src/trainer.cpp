#include "mtopt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "mtopt/errors.hpp"

namespace mtopt {

Method method_from_string(const std::string& s) {
  if (s == "unitary") return Method::Unitary;
  if (s == "mgda") return Method::Mgda;
  if (s == "imtl" || s == "imtl_g") return Method::ImtlG;
  if (s == "pcgrad") return Method::PcGrad;
  if (s == "graddrop") return Method::GradDrop;
  if (s == "sign_agnostic_graddrop") return Method::SignAgnosticGradDrop;
  if (s == "rlw") return Method::Rlw;
  if (s == "rgd") return Method::Rgd;
  throw UsageError("unknown method '" + s + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Unitary: return "unitary";
    case Method::Mgda: return "mgda";
    case Method::ImtlG: return "imtl_g";
    case Method::PcGrad: return "pcgrad";
    case Method::GradDrop: return "graddrop";
    case Method::SignAgnosticGradDrop: return "sign_agnostic_graddrop";
    case Method::Rlw: return "rlw";
    case Method::Rgd: return "rgd";
  }
  return "?";
}

std::vector<Method> all_methods() {
  return {Method::Unitary, Method::Mgda,  Method::ImtlG, Method::PcGrad, Method::GradDrop,
          Method::SignAgnosticGradDrop, Method::Rlw, Method::Rgd};
}

Space space_from_string(const std::string& s) {
  if (s == "parameter") return Space::Parameter;
  if (s == "representation") return Space::Representation;
  throw UsageError("unknown space '" + s + "'");
}

RlwDistribution rlw_from_string(const std::string& s) {
  if (s == "dirichlet") return RlwDistribution::Dirichlet;
  if (s == "normal") return RlwDistribution::Normal;
  if (s == "constant") return RlwDistribution::Constant;
  throw UsageError("unknown rlw distribution '" + s + "'");
}

std::string to_string(RlwDistribution d) {
  switch (d) {
    case RlwDistribution::Dirichlet: return "dirichlet";
    case RlwDistribution::Normal: return "normal";
    case RlwDistribution::Constant: return "constant";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (method == Method::PcGrad && space != Space::Parameter)
    throw ValidationError("pcgrad is defined on parameter-space gradients only");
  if (method == Method::SignAgnosticGradDrop && space != Space::Representation)
    throw ValidationError("sign_agnostic_graddrop is defined on representation gradients only");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ValidationError("lr_decay must lie in (0, 1]");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ValidationError("l2 must be >= 0");
  for (double p : dropout)
    if (!(p >= 0.0 && p < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (!(rgd_p > 0.0 && rgd_p <= 1.0)) throw ValidationError("rgd_p must lie in (0, 1]");
  if (!(sign_agnostic_p > 0.0 && sign_agnostic_p <= 1.0)) throw ValidationError("sign_agnostic_p must lie in (0, 1]");
  if (!(imtl_l_step_size > 0.0)) throw ValidationError("imtl_l_step_size must be > 0");
  if (eval_every < 1 || norm_every < 1) throw ValidationError("eval_every and norm_every must be >= 1");
  if (steps_per_epoch < 1) throw ValidationError("steps_per_epoch must be >= 1");
  if (qp.max_iter < 1 || !(qp.tol > 0.0)) throw ValidationError("invalid min-norm solver settings");
}

LoopState make_loop_state(const TrainConfig& cfg, int tasks) {
  LossScaleState scales = LossScaleState::zeros(tasks);
  scales.step_size = cfg.imtl_l_step_size;
  return {make_stream(cfg.seed, static_cast<std::uint64_t>(Stream::Dropout)),
          make_stream(cfg.seed, static_cast<std::uint64_t>(Stream::Aggregator)), std::move(scales)};
}

AggregateUpdate<double> aggregate(const GradientSet<double>& gs, const VectorXd& losses, const TrainConfig& cfg,
                                  Rng& rng) {
  const GradientSet<double> rows = cfg.mgda_rescale ? mgda_rescale(gs, losses) : gs;
  switch (cfg.method) {
    case Method::Unitary: return unitary(rows);
    case Method::Mgda: return mgda(rows, cfg.qp);
    case Method::ImtlG: return imtl_g(rows, ImtlOptions{true});
    case Method::PcGrad: return pcgrad(rows, rng);
    case Method::GradDrop: return graddrop(rows, rng, GradDropOptions{cfg.graddrop_flip});
    case Method::Rlw: return rlw(rows, cfg.rlw_distribution, rng);
    case Method::Rgd: return rgd(rows, cfg.rgd_p, rng);
    case Method::SignAgnosticGradDrop: break;
  }
  throw ValidationError(to_string(cfg.method) + " cannot aggregate " + to_string(gs.space()) + " gradients");
}

namespace {

bool is_zero(const VectorXd& v) { return (v.array() == 0.0).all(); }

/// Applies IMTL-L scales to the per-task rows and head gradients.
GradientSet<double> apply_loss_scales(const GradientSet<double>& rows, std::vector<VectorXd>& heads,
                                      const VectorXd& losses, LoopState& state) {
  LossScaleStep step = imtl_l_step(state.loss_scales, losses);
  state.loss_scales = step.state;
  for (std::size_t i = 0; i < heads.size(); ++i) heads[i] *= step.scales(static_cast<Eigen::Index>(i));
  return rows.with_rows_scaled(step.scales);
}

}  // namespace

StepReport compute_step(const MultiTaskModel& model, const Batch& batch, const std::vector<LossKind>& kinds,
                        const TrainConfig& cfg, LoopState& state, bool measure_norm) {
  StepReport rep;
  Rng* drop = &state.dropout_rng;
  const DropoutMode mode = DropoutMode::Train;

  if (cfg.method == Method::Unitary && cfg.unitary_fast_path && !cfg.imtl_l && !cfg.mgda_rescale) {
    SummedGrads sg = summed_grads(model, batch, kinds, cfg.l2, mode, drop);
    if (measure_norm) {
      rep.sum_grad_norm =
          cfg.l2 > 0.0 ? (sg.trunk - cfg.l2 * model.trunk_params()).norm() : sg.trunk.norm();
    }
    rep.trunk_direction = -sg.trunk;
    rep.head_grads = std::move(sg.heads);
    rep.losses = std::move(sg.losses);
    rep.count = sg.count;
  } else if (cfg.space == Space::Parameter) {
    PerTaskParamGrads pg = per_task_param_grads(model, batch, kinds, cfg.l2, mode, drop);
    if (measure_norm) {
      VectorXd total = -negated_sum<double>(pg.trunk.rows());
      if (cfg.l2 > 0.0) total -= cfg.l2 * model.trunk_params();
      rep.sum_grad_norm = total.norm();
    }
    rep.head_grads = std::move(pg.heads);
    GradientSet<double> rows =
        cfg.imtl_l ? apply_loss_scales(pg.trunk, rep.head_grads, pg.losses, state) : std::move(pg.trunk);
    rep.trunk_direction = aggregate(rows, pg.losses, cfg, state.aggregator_rng).direction;
    rep.losses = std::move(pg.losses);
    rep.count = pg.count;
  } else {
    PerTaskReprGrads rg = per_task_repr_grads(model, batch, kinds, cfg.l2, mode, drop);
    if (measure_norm)
      rep.sum_grad_norm = jvp_trunk(model, rg.cache, -negated_sum<double>(rg.repr.rows())).norm();
    rep.head_grads = std::move(rg.heads);
    GradientSet<double> rows =
        cfg.imtl_l ? apply_loss_scales(rg.repr, rep.head_grads, rg.losses, state) : std::move(rg.repr);
    VectorXd g_z;
    if (cfg.method == Method::GradDrop || cfg.method == Method::SignAgnosticGradDrop) {
      const GradientSet<double> scaled = cfg.mgda_rescale ? mgda_rescale(rows, rg.losses) : rows;
      MaskedRepresentation<double> masked =
          cfg.method == Method::GradDrop
              ? graddrop_repr(scaled, rg.cache.z_flat(), model.repr_dim(), state.aggregator_rng,
                              GradDropOptions{cfg.graddrop_flip})
              : sign_agnostic_graddrop(scaled, cfg.sign_agnostic_p, state.aggregator_rng);
      g_z = -masked.masked_sum;
    } else {
      g_z = aggregate(rows, rg.losses, cfg, state.aggregator_rng).direction;
    }
    rep.trunk_direction = jvp_trunk(model, rg.cache, g_z);
    if (cfg.l2 > 0.0) rep.trunk_direction -= cfg.l2 * model.trunk_params();
    rep.losses = std::move(rg.losses);
    rep.count = rg.count;
    rep.count += BackwardCount{1, 0};
  }
  rep.stalled = is_zero(rep.trunk_direction);
  return rep;
}

EvalResult evaluate(const MultiTaskModel& model, const TaskSuite& suite, Split split) {
  const Batch& b = suite.split(split);
  if (b.size() == 0) throw ValidationError("evaluate: split '" + to_string(split) + "' is empty");
  const int m = suite.task_count();
  if (model.task_count() != m) throw DimensionError("evaluate: model and suite disagree on task count");
  const TrunkCache cache = forward_trunk(model, b.inputs, DropoutMode::Eval, nullptr);
  EvalResult r;
  r.losses.resize(m);
  r.metrics.resize(m);
  for (int i = 0; i < m; ++i) {
    const auto t = static_cast<std::size_t>(i);
    const MatrixXd pred = forward_head(model, i, cache.z).output;
    r.losses(i) = task_loss(pred, b.targets[t], suite.kinds[t]);
    if (suite.kinds[t] == LossKind::CrossEntropy) {
      Eigen::Index correct = 0;
      for (Eigen::Index n = 0; n < pred.rows(); ++n) {
        Eigen::Index arg = 0;
        pred.row(n).maxCoeff(&arg);
        if (arg == static_cast<Eigen::Index>(b.targets[t](n, 0))) ++correct;
      }
      r.metrics(i) = static_cast<double>(correct) / static_cast<double>(pred.rows());
    } else {
      r.metrics(i) = -r.losses(i);
    }
  }
  r.average = r.metrics.mean();
  return r;
}

int select_model(const std::vector<EpochRecord>& epochs) {
  if (epochs.empty()) throw ValidationError("select_model: no epochs recorded");
  int best = 0;
  for (std::size_t e = 1; e < epochs.size(); ++e)
    if (epochs[e].val_avg > epochs[static_cast<std::size_t>(best)].val_avg) best = static_cast<int>(e);
  return best;
}

ModelSpec model_spec_for(const TaskSuite& suite, std::vector<int> trunk_hidden, int repr_dim, Activation act) {
  ModelSpec spec;
  spec.input_dim = static_cast<int>(suite.input_dim());
  spec.trunk_hidden = std::move(trunk_hidden);
  spec.repr_dim = repr_dim;
  spec.head_outputs = suite.output_dims;
  spec.activation = act;
  return spec;
}

namespace {

double mean_or_nan(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

TrainResult train(const ModelSpec& spec, const TaskSuite& suite, const TrainConfig& cfg, const std::string& run_id) {
  cfg.validate();
  Rng init_rng = make_stream(cfg.seed, static_cast<std::uint64_t>(Stream::Init));
  return train(MultiTaskModel::init(spec, init_rng), suite, cfg, run_id);
}

TrainResult train(MultiTaskModel model, const TaskSuite& suite, const TrainConfig& cfg, const std::string& run_id) {
  cfg.validate();
  if (suite.quadratic) throw ValidationError("analytic suites are trained with train_quadratic");
  const int m = suite.task_count();
  if (model.task_count() != m) throw DimensionError("model and suite disagree on task count");
  const Eigen::Index n = suite.train.size();
  if (n < 1) throw ValidationError("training split is empty");
  model.set_dropout(cfg.dropout);

  Optimizer opt(cfg.optimizer, model);
  LoopState state = make_loop_state(cfg, m);
  Rng data_rng = make_stream(cfg.seed, static_cast<std::uint64_t>(Stream::DataOrder));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  TrainResult out;
  RunRecord& rec = out.record;
  rec.run_id = run_id;
  rec.method = cfg.method;
  rec.task_count = m;
  BackwardCount total;
  std::uint64_t stalls = 0;
  std::uint64_t step = 0;
  double best = -std::numeric_limits<double>::infinity();
  bool have_selected = false;

  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, e);
    shuffle(order, data_rng);
    std::vector<double> norms;
    double seconds = 0.0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
      const Batch batch =
          suite.train.rows(std::vector<Eigen::Index>(order.begin() + start, order.begin() + start + len));
      const auto t0 = std::chrono::steady_clock::now();
      try {
        StepReport rep = compute_step(model, batch, suite.kinds, cfg, state, step % cfg.norm_every == 0);
        opt.step(model, rep.trunk_direction, rep.head_grads, lr);
        if (step % cfg.norm_every == 0) norms.push_back(rep.sum_grad_norm);
        total += rep.count;
        if (rep.stalled) ++stalls;
      } catch (const DivergenceError& err) {
        throw DivergenceError(run_id + ": " + err.what() + " at step " + std::to_string(step), step);
      }
      seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ++step;
    }

    EpochRecord er;
    er.epoch = e;
    const EvalResult tr = evaluate(model, suite, Split::Train);
    er.train_losses = tr.losses;
    er.total_loss = tr.losses.sum();
    if ((e + 1) % cfg.eval_every == 0 || e + 1 == cfg.epochs) {
      const EvalResult va = evaluate(model, suite, Split::Val);
      er.val_metrics = va.metrics;
      er.val_avg = va.average;
    } else {
      er.val_metrics = VectorXd::Constant(m, std::numeric_limits<double>::quiet_NaN());
      er.val_avg = -std::numeric_limits<double>::infinity();
    }
    er.update_norm = mean_or_nan(norms);
    er.backwards = total.trunk;
    er.head_backwards = total.head_only;
    er.seconds = seconds;
    er.stalls = stalls;
    if (!have_selected || er.val_avg > best) {
      best = er.val_avg;
      out.selected = model;
      have_selected = true;
    }
    rec.epochs.push_back(std::move(er));
    rec.norm_samples.push_back(std::move(norms));
  }

  rec.selected_epoch = select_model(rec.epochs);
  const EvalResult te = evaluate(out.selected, suite, Split::Test);
  rec.test_metrics = te.metrics;
  rec.test_avg = te.average;
  out.model = std::move(model);
  return out;
}

RunRecord train_quadratic(const QuadraticTasks& tasks, const VectorXd& theta0, const TrainConfig& cfg,
                          const std::string& run_id) {
  cfg.validate();
  if (cfg.space != Space::Parameter) throw ValidationError("analytic suites have no representation space");
  if (cfg.optimizer != OptimizerKind::Sgd) throw ValidationError("analytic suites are trained with sgd");
  if (theta0.size() != tasks.dim()) throw DimensionError("theta0 has the wrong length");
  const int m = tasks.task_count();
  LoopState state = make_loop_state(cfg, m);
  VectorXd theta = theta0;

  RunRecord rec;
  rec.run_id = run_id;
  rec.method = cfg.method;
  rec.task_count = m;
  BackwardCount total;
  std::uint64_t stalls = 0;
  std::uint64_t step = 0;
  const bool fast = cfg.method == Method::Unitary && cfg.unitary_fast_path && !cfg.imtl_l && !cfg.mgda_rescale;

  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, e);
    std::vector<double> norms;
    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < cfg.steps_per_epoch; ++s, ++step) {
      GradientSet<double> gs = tasks.grads(theta);
      const VectorXd losses = tasks.losses(theta);
      if (step % cfg.norm_every == 0) norms.push_back(negated_sum<double>(gs.rows()).norm());
      if (cfg.l2 > 0.0) {
        RowMatrix<double> rows = gs.rows();
        rows.rowwise() += ((cfg.l2 / m) * theta).transpose();
        gs = GradientSet<double>(std::move(rows), Space::Parameter);
      }
      std::vector<VectorXd> no_heads(static_cast<std::size_t>(m), VectorXd());
      if (cfg.imtl_l) gs = apply_loss_scales(gs, no_heads, losses, state);
      const VectorXd dir = aggregate(gs, losses, cfg, state.aggregator_rng).direction;
      theta += lr * dir;
      if (!all_finite(theta))
        throw DivergenceError(run_id + ": non-finite parameters at step " + std::to_string(step), step);
      total += fast ? BackwardCount{1, 0} : BackwardCount{static_cast<std::size_t>(m), 0};
      if (is_zero(dir)) ++stalls;
    }
    EpochRecord er;
    er.epoch = e;
    er.train_losses = tasks.losses(theta);
    er.total_loss = er.train_losses.sum();
    er.val_metrics = -er.train_losses;
    er.val_avg = er.val_metrics.mean();
    er.update_norm = mean_or_nan(norms);
    er.backwards = total.trunk;
    er.head_backwards = total.head_only;
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    er.stalls = stalls;
    rec.epochs.push_back(std::move(er));
    rec.norm_samples.push_back(std::move(norms));
  }
  rec.selected_epoch = select_model(rec.epochs);
  rec.test_metrics = rec.epochs[static_cast<std::size_t>(rec.selected_epoch)].val_metrics;
  rec.test_avg = rec.epochs[static_cast<std::size_t>(rec.selected_epoch)].val_avg;
  rec.final_theta = theta;
  return rec;
}

std::vector<std::string> run_csv_header(int tasks) {
  std::vector<std::string> h{"epoch"};
  for (int i = 0; i < tasks; ++i) h.push_back("loss_task_" + std::to_string(i));
  h.emplace_back("loss_total");
  for (int i = 0; i < tasks; ++i) h.push_back("val_task_" + std::to_string(i));
  for (const char* c : {"val_avg", "update_norm", "backwards", "head_backwards", "stalls", "seconds"}) h.emplace_back(c);
  return h;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_run_csv(const RunRecord& record, std::ostream& out) {
  const auto header = run_csv_header(record.task_count);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& e : record.epochs) {
    out << e.epoch;
    for (Eigen::Index i = 0; i < e.train_losses.size(); ++i) out << ',' << fmt(e.train_losses(i));
    out << ',' << fmt(e.total_loss);
    for (Eigen::Index i = 0; i < e.val_metrics.size(); ++i) out << ',' << fmt(e.val_metrics(i));
    out << ',' << fmt(e.val_avg) << ',' << fmt(e.update_norm) << ',' << e.backwards << ',' << e.head_backwards << ','
        << e.stalls << ',' << fmt(e.seconds) << '\n';
  }
}

}  // namespace mtopt
