#include "mtopt/net.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "mtopt/errors.hpp"

namespace mtopt {

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity" || s == "linear") return Activation::Identity;
  throw UsageError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "mse") return LossKind::Mse;
  if (s == "l1") return LossKind::L1;
  throw UsageError("unknown loss kind '" + s + "'");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::Mse: return "mse";
    case LossKind::L1: return "l1";
  }
  return "?";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw UsageError("unknown optimizer '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

namespace {

MatrixXd activate(const MatrixXd& pre, Activation act) {
  switch (act) {
    case Activation::Relu: return pre.cwiseMax(0.0);
    case Activation::Tanh: return pre.array().tanh().matrix();
    case Activation::Identity: return pre;
  }
  return pre;
}

MatrixXd activation_grad(const MatrixXd& pre, const MatrixXd& upstream, Activation act) {
  switch (act) {
    case Activation::Relu: return (pre.array() > 0.0).select(upstream, 0.0);
    case Activation::Tanh: {
      const Eigen::ArrayXXd t = pre.array().tanh();
      return (upstream.array() * (1.0 - t * t)).matrix();
    }
    case Activation::Identity: return upstream;
  }
  return upstream;
}

MatrixXd affine(const Layer& layer, const MatrixXd& x) {
  if (x.cols() != layer.inputs()) {
    throw DimensionError("layer expects width " + std::to_string(layer.inputs()) + ", got " +
                         std::to_string(x.cols()));
  }
  return (x * layer.weight.transpose()).rowwise() + layer.bias.transpose();
}

Layer init_layer(int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Layer l{MatrixXd(out, in), VectorXd(out)};
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c) l.weight(r, c) = bound * (2.0 * uniform01(rng) - 1.0);
  for (int r = 0; r < out; ++r) l.bias(r) = bound * (2.0 * uniform01(rng) - 1.0);
  return l;
}

/// Backward through one layer. Writes the flattened parameter gradient at
/// `offset` in `grad` and returns d loss / d layer input.
MatrixXd layer_backward(const Layer& layer, const LayerCache& cache, MatrixXd upstream, Activation act,
                        bool activated, VectorXd& grad, Eigen::Index offset) {
  if (cache.keep_scale.size() > 0) upstream.array() *= cache.keep_scale.array();
  const MatrixXd d_pre = activated ? activation_grad(cache.pre, upstream, act) : upstream;
  const MatrixXd d_w = d_pre.transpose() * cache.input;  // out x in
  Eigen::Index k = offset;
  for (Eigen::Index r = 0; r < d_w.rows(); ++r)
    for (Eigen::Index c = 0; c < d_w.cols(); ++c) grad(k++) = d_w(r, c);
  grad.segment(k, layer.outputs()) = d_pre.colwise().sum().transpose();
  return d_pre * layer.weight;
}

Eigen::Index param_count(const std::vector<Layer>& layers) {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

/// Backward through a stack of layers; the last one is unactivated when `linear_last`.
MatrixXd stack_backward(const std::vector<Layer>& layers, const std::vector<LayerCache>& caches, MatrixXd upstream,
                        Activation act, bool linear_last, VectorXd& grad) {
  grad = VectorXd::Zero(param_count(layers));
  std::vector<Eigen::Index> offsets(layers.size());
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    offsets[i] = off;
    off += layers[i].param_count();
  }
  for (std::size_t i = layers.size(); i-- > 0;) {
    const bool activated = !(linear_last && i + 1 == layers.size());
    upstream = layer_backward(layers[i], caches[i], std::move(upstream), act, activated, grad, offsets[i]);
  }
  return upstream;
}

MatrixXd unflatten_rows(const VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw DimensionError("cotangent length " + std::to_string(v.size()) + " does not match " +
                         std::to_string(rows) + " x " + std::to_string(cols));
  }
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v(r * cols + c);
  return m;
}

VectorXd flatten_rows(const MatrixXd& m) {
  VectorXd v(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v(r * m.cols() + c) = m(r, c);
  return v;
}

void check_batch(const MultiTaskModel& model, const Batch& batch, const std::vector<LossKind>& kinds) {
  if (static_cast<int>(kinds.size()) != model.task_count() ||
      static_cast<int>(batch.targets.size()) != model.task_count()) {
    throw DimensionError("batch/loss kinds do not match the model's task count");
  }
  for (const auto& t : batch.targets)
    if (t.rows() != batch.size()) throw DimensionError("targets disagree on batch size");
}

void check_loss(double loss, int task) {
  if (!std::isfinite(loss)) throw DivergenceError("non-finite loss for task " + std::to_string(task), 0);
}

}  // namespace

MultiTaskModel::MultiTaskModel(std::vector<Layer> trunk, std::vector<std::vector<Layer>> heads, Activation act,
                               std::vector<double> dropout)
    : trunk_(std::move(trunk)), heads_(std::move(heads)), activation_(act) {
  if (trunk_.empty()) throw DimensionError("model needs at least one trunk layer");
  if (heads_.empty()) throw DimensionError("model needs at least one head");
  for (std::size_t i = 1; i < trunk_.size(); ++i)
    if (trunk_[i].inputs() != trunk_[i - 1].outputs()) throw DimensionError("trunk layer widths do not chain");
  for (const auto& h : heads_) {
    if (h.empty() || h.front().inputs() != repr_dim()) throw DimensionError("head input must equal repr dim");
    for (std::size_t i = 1; i < h.size(); ++i)
      if (h[i].inputs() != h[i - 1].outputs()) throw DimensionError("head layer widths do not chain");
  }
  set_dropout(std::move(dropout));
  if (!all_finite()) throw ValidationError("model has non-finite parameters");
}

void MultiTaskModel::set_dropout(std::vector<double> p) {
  if (p.empty()) p.assign(trunk_.size(), 0.0);
  if (p.size() == 1) p.assign(trunk_.size(), p.front());
  if (p.size() != trunk_.size()) throw DimensionError("one dropout probability per trunk layer");
  for (double q : p)
    if (!(q >= 0.0 && q < 1.0)) throw ValidationError("dropout probability must lie in [0, 1)");
  dropout_ = std::move(p);
}

MultiTaskModel MultiTaskModel::init(const ModelSpec& spec, Rng& rng) {
  if (spec.input_dim < 1 || spec.repr_dim < 1 || spec.head_outputs.empty())
    throw DimensionError("model spec needs input_dim, repr_dim and at least one task");
  std::vector<Layer> trunk;
  int in = spec.input_dim;
  for (int w : spec.trunk_hidden) {
    trunk.push_back(init_layer(in, w, rng));
    in = w;
  }
  trunk.push_back(init_layer(in, spec.repr_dim, rng));
  std::vector<std::vector<Layer>> heads;
  for (int out : spec.head_outputs) {
    std::vector<Layer> head;
    int hin = spec.repr_dim;
    for (int w : spec.head_hidden) {
      head.push_back(init_layer(hin, w, rng));
      hin = w;
    }
    head.push_back(init_layer(hin, out, rng));
    heads.push_back(std::move(head));
  }
  return MultiTaskModel(std::move(trunk), std::move(heads), spec.activation, spec.dropout);
}

Eigen::Index MultiTaskModel::trunk_param_count() const { return param_count(trunk_); }
Eigen::Index MultiTaskModel::head_param_count(int task) const { return param_count(head(task)); }
VectorXd MultiTaskModel::trunk_params() const { return flatten(trunk_); }
VectorXd MultiTaskModel::head_params(int task) const { return flatten(head(task)); }
void MultiTaskModel::set_trunk_params(const VectorXd& theta) { unflatten(theta, trunk_); }
void MultiTaskModel::set_head_params(int task, const VectorXd& theta) { unflatten(theta, mutable_head(task)); }

bool MultiTaskModel::all_finite() const {
  auto ok = [](const std::vector<Layer>& ls) {
    for (const auto& l : ls)
      if (!mtopt::all_finite(l.weight) || !mtopt::all_finite(l.bias)) return false;
    return true;
  };
  if (!ok(trunk_)) return false;
  for (const auto& h : heads_)
    if (!ok(h)) return false;
  return true;
}

VectorXd flatten(const std::vector<Layer>& layers) {
  VectorXd out(param_count(layers));
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out(k++) = l.weight(r, c);
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

void unflatten(const VectorXd& theta, std::vector<Layer>& layers) {
  if (theta.size() != param_count(layers)) throw DimensionError("parameter vector has the wrong length");
  Eigen::Index k = 0;
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = theta(k++);
    l.bias = theta.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

Batch Batch::rows(const std::vector<Eigen::Index>& idx) const {
  Batch out;
  out.inputs.resize(static_cast<Eigen::Index>(idx.size()), inputs.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(idx[r]);
  for (const auto& t : targets) {
    MatrixXd sub(static_cast<Eigen::Index>(idx.size()), t.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = t.row(idx[r]);
    out.targets.push_back(std::move(sub));
  }
  return out;
}

VectorXd TrunkCache::z_flat() const { return flatten_rows(z); }

TrunkCache forward_trunk(const MultiTaskModel& model, const MatrixXd& x, DropoutMode mode, Rng* rng) {
  if (x.cols() != model.input_dim()) {
    throw DimensionError("input width " + std::to_string(x.cols()) + " but model expects " +
                         std::to_string(model.input_dim()));
  }
  TrunkCache cache;
  MatrixXd h = x;
  for (std::size_t i = 0; i < model.trunk().size(); ++i) {
    LayerCache lc;
    lc.input = h;
    lc.pre = affine(model.trunk()[i], h);
    h = activate(lc.pre, model.activation());
    const double p = model.dropout(i);
    if (mode == DropoutMode::Train && p > 0.0) {
      if (rng == nullptr) throw ValidationError("train-mode dropout needs a generator");
      lc.keep_scale.resize(h.rows(), h.cols());
      const double scale = 1.0 / (1.0 - p);
      for (Eigen::Index r = 0; r < h.rows(); ++r)
        for (Eigen::Index c = 0; c < h.cols(); ++c) lc.keep_scale(r, c) = bernoulli(*rng, p) ? 0.0 : scale;
      h.array() *= lc.keep_scale.array();
    }
    cache.layers.push_back(std::move(lc));
  }
  cache.z = std::move(h);
  return cache;
}

HeadCache forward_head(const MultiTaskModel& model, int task, const MatrixXd& z) {
  const auto& head = model.head(task);
  HeadCache cache;
  MatrixXd h = z;
  for (std::size_t i = 0; i < head.size(); ++i) {
    LayerCache lc;
    lc.input = h;
    lc.pre = affine(head[i], h);
    h = (i + 1 == head.size()) ? lc.pre : activate(lc.pre, model.activation());
    cache.layers.push_back(std::move(lc));
  }
  cache.output = std::move(h);
  return cache;
}

ForwardResult forward(const MultiTaskModel& model, const MatrixXd& x, int task, DropoutMode mode, Rng* rng) {
  ForwardResult r;
  r.trunk = forward_trunk(model, x, mode, rng);
  r.head = forward_head(model, task, r.trunk.z);
  r.predictions = r.head.output;
  return r;
}

double task_loss(const MatrixXd& pred, const MatrixXd& targets, LossKind kind) {
  if (pred.rows() != targets.rows()) throw DimensionError("task_loss: batch sizes differ");
  const double b = static_cast<double>(pred.rows());
  switch (kind) {
    case LossKind::CrossEntropy: {
      if (targets.cols() != 1) throw DimensionError("cross entropy expects one class index per row");
      double total = 0.0;
      for (Eigen::Index r = 0; r < pred.rows(); ++r) {
        const auto cls = static_cast<Eigen::Index>(targets(r, 0));
        if (cls < 0 || cls >= pred.cols()) throw DimensionError("class index out of range");
        const double mx = pred.row(r).maxCoeff();
        const double lse = mx + std::log((pred.row(r).array() - mx).exp().sum());
        total += lse - pred(r, cls);
      }
      return total / b;
    }
    case LossKind::Mse:
      if (pred.cols() != targets.cols()) throw DimensionError("mse: output widths differ");
      return (pred - targets).squaredNorm() / b;
    case LossKind::L1:
      if (pred.cols() != targets.cols()) throw DimensionError("l1: output widths differ");
      return (pred - targets).cwiseAbs().sum() / b;
  }
  return 0.0;
}

MatrixXd task_loss_grad(const MatrixXd& pred, const MatrixXd& targets, LossKind kind) {
  if (pred.rows() != targets.rows()) throw DimensionError("task_loss_grad: batch sizes differ");
  const double b = static_cast<double>(pred.rows());
  switch (kind) {
    case LossKind::CrossEntropy: {
      MatrixXd g(pred.rows(), pred.cols());
      for (Eigen::Index r = 0; r < pred.rows(); ++r) {
        const double mx = pred.row(r).maxCoeff();
        const Eigen::RowVectorXd e = (pred.row(r).array() - mx).exp().matrix();
        g.row(r) = e / e.sum();
        g(r, static_cast<Eigen::Index>(targets(r, 0))) -= 1.0;
      }
      return g / b;
    }
    case LossKind::Mse: return 2.0 * (pred - targets) / b;
    case LossKind::L1: return (pred - targets).array().sign().matrix() / b;
  }
  return pred;
}

namespace {

struct HeadPass {
  double loss;
  MatrixXd d_z;
  VectorXd head_grad;
};

HeadPass head_pass(const MultiTaskModel& model, int task, const MatrixXd& z, const MatrixXd& targets, LossKind kind,
                   double l2) {
  const HeadCache hc = forward_head(model, task, z);
  HeadPass p;
  p.loss = task_loss(hc.output, targets, kind);
  check_loss(p.loss, task);
  const MatrixXd d_out = task_loss_grad(hc.output, targets, kind);
  p.d_z = stack_backward(model.head(task), hc.layers, d_out, model.activation(), true, p.head_grad);
  if (l2 > 0.0) p.head_grad += l2 * model.head_params(task);
  return p;
}

VectorXd trunk_backward(const MultiTaskModel& model, const TrunkCache& cache, const MatrixXd& d_z) {
  VectorXd grad;
  stack_backward(model.trunk(), cache.layers, d_z, model.activation(), false, grad);
  return grad;
}

}  // namespace

PerTaskParamGrads per_task_param_grads(const MultiTaskModel& model, const Batch& batch,
                                       const std::vector<LossKind>& kinds, double l2, DropoutMode mode, Rng* rng) {
  if (!(l2 >= 0.0)) throw ValidationError("l2 must be >= 0");
  check_batch(model, batch, kinds);
  const int m = model.task_count();
  TrunkCache cache = forward_trunk(model, batch.inputs, mode, rng);
  RowMatrix<double> rows(m, model.trunk_param_count());
  std::vector<VectorXd> heads;
  VectorXd losses(m);
  const VectorXd decay = l2 > 0.0 ? VectorXd((l2 / m) * model.trunk_params()) : VectorXd();
  for (int i = 0; i < m; ++i) {
    HeadPass p = head_pass(model, i, cache.z, batch.targets[static_cast<std::size_t>(i)],
                           kinds[static_cast<std::size_t>(i)], l2);
    VectorXd g = trunk_backward(model, cache, p.d_z);
    if (l2 > 0.0) g += decay;
    rows.row(i) = g.transpose();
    losses(i) = p.loss;
    heads.push_back(std::move(p.head_grad));
  }
  BackwardCount count{static_cast<std::size_t>(m), 0};
  return {GradientSet<double>(std::move(rows), Space::Parameter), std::move(heads), std::move(losses),
          std::move(cache), count};
}

PerTaskReprGrads per_task_repr_grads(const MultiTaskModel& model, const Batch& batch,
                                     const std::vector<LossKind>& kinds, double l2, DropoutMode mode, Rng* rng) {
  if (!(l2 >= 0.0)) throw ValidationError("l2 must be >= 0");
  check_batch(model, batch, kinds);
  const int m = model.task_count();
  TrunkCache cache = forward_trunk(model, batch.inputs, mode, rng);
  RowMatrix<double> rows(m, cache.z.size());
  std::vector<VectorXd> heads;
  VectorXd losses(m);
  for (int i = 0; i < m; ++i) {
    HeadPass p = head_pass(model, i, cache.z, batch.targets[static_cast<std::size_t>(i)],
                           kinds[static_cast<std::size_t>(i)], l2);
    rows.row(i) = flatten_rows(p.d_z).transpose();
    losses(i) = p.loss;
    heads.push_back(std::move(p.head_grad));
  }
  BackwardCount count{0, static_cast<std::size_t>(m)};
  return {GradientSet<double>(std::move(rows), Space::Representation), std::move(heads), std::move(losses),
          std::move(cache), count};
}

VectorXd jvp_trunk(const MultiTaskModel& model, const TrunkCache& cache, const VectorXd& v) {
  return trunk_backward(model, cache, unflatten_rows(v, cache.z.rows(), cache.z.cols()));
}

SummedGrads summed_grads(const MultiTaskModel& model, const Batch& batch, const std::vector<LossKind>& kinds,
                         double l2, DropoutMode mode, Rng* rng) {
  if (!(l2 >= 0.0)) throw ValidationError("l2 must be >= 0");
  check_batch(model, batch, kinds);
  const int m = model.task_count();
  const TrunkCache cache = forward_trunk(model, batch.inputs, mode, rng);
  SummedGrads out;
  out.losses.resize(m);
  MatrixXd d_z = MatrixXd::Zero(cache.z.rows(), cache.z.cols());
  for (int i = 0; i < m; ++i) {
    HeadPass p = head_pass(model, i, cache.z, batch.targets[static_cast<std::size_t>(i)],
                           kinds[static_cast<std::size_t>(i)], l2);
    d_z += p.d_z;
    out.losses(i) = p.loss;
    out.heads.push_back(std::move(p.head_grad));
  }
  out.trunk = trunk_backward(model, cache, d_z);
  if (l2 > 0.0) out.trunk += l2 * model.trunk_params();
  out.count = {1, 0};
  return out;
}

Optimizer::Optimizer(OptimizerKind kind, const MultiTaskModel& model, AdamHyper hyper) : kind_(kind), hyper_(hyper) {
  m_.push_back(VectorXd::Zero(model.trunk_param_count()));
  for (int i = 0; i < model.task_count(); ++i) m_.push_back(VectorXd::Zero(model.head_param_count(i)));
  v_ = m_;
}

VectorXd Optimizer::adam_delta(std::size_t slot, const VectorXd& grad) {
  m_[slot] = hyper_.beta1 * m_[slot] + (1.0 - hyper_.beta1) * grad;
  v_[slot] = hyper_.beta2 * v_[slot] + (1.0 - hyper_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  return -((m_[slot] / c1).array() / ((v_[slot] / c2).array().sqrt() + hyper_.eps)).matrix();
}

void Optimizer::step(MultiTaskModel& model, const VectorXd& trunk_direction, const std::vector<VectorXd>& head_grads,
                     double lr) {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
  if (static_cast<int>(head_grads.size()) != model.task_count()) throw DimensionError("one head gradient per task");
  ++t_;
  if (kind_ == OptimizerKind::Sgd) {
    model.set_trunk_params(model.trunk_params() + lr * trunk_direction);
    for (int i = 0; i < model.task_count(); ++i)
      model.set_head_params(i, model.head_params(i) - lr * head_grads[static_cast<std::size_t>(i)]);
  } else {
    model.set_trunk_params(model.trunk_params() + lr * adam_delta(0, -trunk_direction));
    for (int i = 0; i < model.task_count(); ++i)
      model.set_head_params(i, model.head_params(i) +
                                   lr * adam_delta(static_cast<std::size_t>(i) + 1, head_grads[static_cast<std::size_t>(i)]));
  }
  if (!model.all_finite()) throw DivergenceError("non-finite parameters after optimizer step", static_cast<std::size_t>(t_));
}

namespace {

constexpr const char* kCheckpointHeader = "mtopt-checkpoint 1";

void write_layers(std::ostream& out, const std::string& name, const std::vector<Layer>& layers) {
  out << name << ' ' << layers.size();
  for (const auto& l : layers) out << ' ' << l.outputs() << 'x' << l.inputs();
  out << '\n';
  const VectorXd flat = flatten(layers);
  out << "values " << flat.size() << '\n';
  for (Eigen::Index i = 0; i < flat.size(); ++i) out << flat(i) << (i + 1 == flat.size() ? '\n' : ' ');
}

std::vector<Layer> read_layers(std::istream& in, const std::string& expected) {
  std::string name;
  std::size_t count = 0;
  if (!(in >> name >> count) || name != expected) throw ValidationError("checkpoint: expected block '" + expected + "'");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < count; ++i) {
    Eigen::Index out = 0, inputs = 0;
    char x = 0;
    if (!(in >> out >> x >> inputs) || x != 'x') throw ValidationError("checkpoint: bad layer shape");
    layers.push_back({MatrixXd::Zero(out, inputs), VectorXd::Zero(out)});
  }
  std::string tag;
  Eigen::Index n = 0;
  if (!(in >> tag >> n) || tag != "values" || n != param_count(layers))
    throw ValidationError("checkpoint: value count does not match shapes");
  VectorXd flat(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(in >> flat(i))) throw ValidationError("checkpoint: truncated values");
  unflatten(flat, layers);
  return layers;
}

}  // namespace

void save_checkpoint(const MultiTaskModel& model, std::ostream& out) {
  const auto old_precision = out.precision(17);
  out << kCheckpointHeader << '\n';
  out << "activation " << to_string(model.activation()) << '\n';
  out << "dropout " << model.dropout().size();
  for (double p : model.dropout()) out << ' ' << p;
  out << '\n';
  out << "tasks " << model.task_count() << '\n';
  write_layers(out, "trunk", model.trunk());
  for (int i = 0; i < model.task_count(); ++i) write_layers(out, "head", model.head(i));
  out.precision(old_precision);
}

MultiTaskModel load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointHeader) throw ValidationError("checkpoint: bad header");
  std::string tag, act;
  if (!(in >> tag >> act) || tag != "activation") throw ValidationError("checkpoint: missing activation");
  std::size_t nd = 0;
  if (!(in >> tag >> nd) || tag != "dropout") throw ValidationError("checkpoint: missing dropout");
  std::vector<double> dropout(nd);
  for (auto& p : dropout)
    if (!(in >> p)) throw ValidationError("checkpoint: bad dropout");
  int tasks = 0;
  if (!(in >> tag >> tasks) || tag != "tasks" || tasks < 1) throw ValidationError("checkpoint: bad task count");
  auto trunk = read_layers(in, "trunk");
  std::vector<std::vector<Layer>> heads;
  for (int i = 0; i < tasks; ++i) heads.push_back(read_layers(in, "head"));
  return MultiTaskModel(std::move(trunk), std::move(heads), activation_from_string(act), std::move(dropout));
}

}  // namespace mtopt
