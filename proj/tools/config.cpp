#include "config.hpp"

#include <fstream>
#include <set>

#include "mtopt/errors.hpp"

namespace mtopt::cli {

std::string MethodSpec::label() const {
  std::string s = to_string(method);
  const Space natural = method == Method::SignAgnosticGradDrop ? Space::Representation : Space::Parameter;
  if (space != natural) s += space == Space::Representation ? "-repr" : "-param";
  return s;
}

namespace {

/// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config: '" + where(key) + "' has the wrong type");
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw UsageError("config: unknown key '" + where(it.key()) + "'");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E, typename F>
void get_enum(Fields& f, const char* key, E& out, F from_string) {
  std::string s;
  bool present = false;
  if (const Json* c = f.child(key)) {
    if (!c->is_string()) throw UsageError("config: '" + f.where(key) + "' must be a string");
    s = c->get<std::string>();
    present = true;
  }
  if (present) out = from_string(s);
}

void parse_suite(const Json& j, SuiteConfig& s) {
  Fields f(j, "suite");
  f.get("kind", s.kind);
  if (s.kind == "blobs") {
    f.get("tasks", s.blobs.tasks);
    f.get("classes", s.blobs.classes);
    f.get("input_dim", s.blobs.input_dim);
    f.get("samples", s.blobs.samples);
    f.get("separation", s.blobs.separation);
    f.get("label_noise", s.blobs.label_noise);
    f.get("seed", s.blobs.seed);
  } else if (s.kind == "regression") {
    f.get("ratio", s.regression.ratio);
    f.get("input_dim", s.regression.input_dim);
    f.get("samples", s.regression.samples);
    f.get("noise", s.regression.noise);
    f.get("seed", s.regression.seed);
  } else if (s.kind == "quadratics") {
    f.get("c1", s.c1);
    f.get("c2", s.c2);
    f.get("kappa", s.kappa);
    f.get("theta0", s.theta0);
    if (s.c1.empty() || s.c1.size() != s.c2.size() || s.theta0.size() != s.c1.size())
      throw UsageError("config: suite.c1, suite.c2 and suite.theta0 need equal nonzero length");
  } else if (s.kind == "multimnist") {
    f.get("images", s.images);
    f.get("labels", s.labels);
    f.get("canvas", s.multimnist.canvas);
    f.get("offset", s.multimnist.offset);
    f.get("seed", s.multimnist.seed);
    f.get("train_sources", s.multimnist.train_sources);
    if (s.images.empty() || s.labels.empty()) throw UsageError("config: multimnist needs suite.images and suite.labels");
  } else {
    throw UsageError("config: unknown suite kind '" + s.kind + "'");
  }
  f.finish();
}

void parse_model(const Json& j, ModelConfig& m) {
  Fields f(j, "model");
  f.get("trunk_hidden", m.trunk_hidden);
  f.get("repr_dim", m.repr_dim);
  f.get("head_hidden", m.head_hidden);
  get_enum(f, "activation", m.activation, activation_from_string);
  f.finish();
  if (m.repr_dim < 1) throw UsageError("config: model.repr_dim must be >= 1");
  for (int w : m.trunk_hidden)
    if (w < 1) throw UsageError("config: model.trunk_hidden widths must be >= 1");
  for (int w : m.head_hidden)
    if (w < 1) throw UsageError("config: model.head_hidden widths must be >= 1");
}

MethodSpec parse_method(const Json& j, Space default_space) {
  MethodSpec m;
  if (j.is_string()) {
    m.method = method_from_string(j.get<std::string>());
    m.space = m.method == Method::SignAgnosticGradDrop ? Space::Representation : default_space;
    return m;
  }
  Fields f(j, "train.methods[]");
  std::string name;
  f.get("method", name);
  if (name.empty()) throw UsageError("config: train.methods[] entry needs 'method'");
  m.method = method_from_string(name);
  m.space = m.method == Method::SignAgnosticGradDrop ? Space::Representation : default_space;
  get_enum(f, "space", m.space, space_from_string);
  f.finish();
  return m;
}

void parse_train(const Json& j, ExperimentConfig& cfg) {
  TrainConfig& t = cfg.train;
  Fields f(j, "train");
  Space space = Space::Parameter;
  get_enum(f, "space", space, space_from_string);
  if (const Json* ms = f.child("methods")) {
    if (!ms->is_array() || ms->empty()) throw UsageError("config: train.methods must be a nonempty array");
    cfg.methods.clear();
    for (const auto& e : *ms) cfg.methods.push_back(parse_method(e, space));
  } else {
    for (auto& m : cfg.methods)
      if (m.method != Method::SignAgnosticGradDrop) m.space = space;
  }
  f.get("mgda_rescale", t.mgda_rescale);
  f.get("imtl_l", t.imtl_l);
  f.get("imtl_l_step_size", t.imtl_l_step_size);
  f.get("graddrop_flip", t.graddrop_flip);
  get_enum(f, "rlw_distribution", t.rlw_distribution, rlw_from_string);
  f.get("rgd_p", t.rgd_p);
  f.get("sign_agnostic_p", t.sign_agnostic_p);
  if (const Json* qp = f.child("qp")) {
    Fields q(*qp, "train.qp");
    q.get("max_iter", t.qp.max_iter);
    q.get("tol", t.qp.tol);
    q.finish();
  }
  f.get("epochs", t.epochs);
  f.get("batch_size", t.batch_size);
  f.get("lr", t.lr);
  f.get("lr_decay", t.lr_decay);
  f.get("l2", t.l2);
  f.get("dropout", t.dropout);
  get_enum(f, "optimizer", t.optimizer, optimizer_from_string);
  f.get("eval_every", t.eval_every);
  f.get("norm_every", t.norm_every);
  f.get("unitary_fast_path", t.unitary_fast_path);
  f.get("steps_per_epoch", t.steps_per_epoch);
  f.finish();
}

}  // namespace

ExperimentConfig parse_config(const Json& j) {
  ExperimentConfig cfg;
  Fields f(j, "");
  if (const Json* s = f.child("suite")) parse_suite(*s, cfg.suite);
  if (const Json* m = f.child("model")) parse_model(*m, cfg.model);
  if (const Json* t = f.child("train")) parse_train(*t, cfg);
  const Json* seeds = f.child("seeds");
  const Json* reps = f.child("repetitions");
  if (seeds && reps) throw UsageError("config: give either 'seeds' or 'repetitions', not both");
  if (seeds) {
    f.get("seeds", cfg.seeds);
    if (cfg.seeds.empty()) throw UsageError("config: 'seeds' must be nonempty");
  } else if (reps) {
    int n = 0;
    f.get("repetitions", n);
    if (n < 1) throw UsageError("config: 'repetitions' must be >= 1");
    cfg.seeds.clear();
    for (int i = 0; i < n; ++i) cfg.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  f.get("output_dir", cfg.output_dir);
  if (const Json* sw = f.child("sweep")) {
    Fields s(*sw, "sweep");
    s.get("l2", cfg.sweep.l2);
    s.get("dropout", cfg.sweep.dropout);
    s.finish();
  }
  f.finish();

  if (cfg.suite.kind == "quadratics") {
    if (cfg.train.optimizer != OptimizerKind::Sgd) throw UsageError("config: quadratics suites need train.optimizer = sgd");
    for (const auto& m : cfg.methods)
      if (m.space != Space::Parameter) throw UsageError("config: quadratics suites have no representation space");
  }
  for (const auto& m : cfg.methods) {
    TrainConfig probe = train_config_for(cfg, m, 0);
    try {
      probe.validate();
    } catch (const ValidationError& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

Json to_json(const ExperimentConfig& cfg) {
  Json j;
  const SuiteConfig& s = cfg.suite;
  Json suite{{"kind", s.kind}};
  if (s.kind == "blobs") {
    suite["tasks"] = s.blobs.tasks;
    suite["classes"] = s.blobs.classes;
    suite["input_dim"] = s.blobs.input_dim;
    suite["samples"] = s.blobs.samples;
    suite["separation"] = s.blobs.separation;
    suite["label_noise"] = s.blobs.label_noise;
    suite["seed"] = s.blobs.seed;
  } else if (s.kind == "regression") {
    suite["ratio"] = s.regression.ratio;
    suite["input_dim"] = s.regression.input_dim;
    suite["samples"] = s.regression.samples;
    suite["noise"] = s.regression.noise;
    suite["seed"] = s.regression.seed;
  } else if (s.kind == "quadratics") {
    suite["c1"] = s.c1;
    suite["c2"] = s.c2;
    suite["kappa"] = s.kappa;
    suite["theta0"] = s.theta0;
  } else {
    suite["images"] = s.images;
    suite["labels"] = s.labels;
    suite["canvas"] = s.multimnist.canvas;
    suite["offset"] = s.multimnist.offset;
    suite["seed"] = s.multimnist.seed;
    suite["train_sources"] = s.multimnist.train_sources;
  }
  j["suite"] = suite;
  j["model"] = Json{{"trunk_hidden", cfg.model.trunk_hidden},
                    {"repr_dim", cfg.model.repr_dim},
                    {"head_hidden", cfg.model.head_hidden},
                    {"activation", to_string(cfg.model.activation)}};
  const TrainConfig& t = cfg.train;
  Json methods = Json::array();
  for (const auto& m : cfg.methods)
    methods.push_back(Json{{"method", to_string(m.method)}, {"space", to_string(m.space)}});
  j["train"] = Json{{"methods", methods},
                    {"mgda_rescale", t.mgda_rescale},
                    {"imtl_l", t.imtl_l},
                    {"imtl_l_step_size", t.imtl_l_step_size},
                    {"graddrop_flip", t.graddrop_flip},
                    {"rlw_distribution", to_string(t.rlw_distribution)},
                    {"rgd_p", t.rgd_p},
                    {"sign_agnostic_p", t.sign_agnostic_p},
                    {"qp", Json{{"max_iter", t.qp.max_iter}, {"tol", t.qp.tol}}},
                    {"epochs", t.epochs},
                    {"batch_size", t.batch_size},
                    {"lr", t.lr},
                    {"lr_decay", t.lr_decay},
                    {"l2", t.l2},
                    {"dropout", t.dropout},
                    {"optimizer", to_string(t.optimizer)},
                    {"eval_every", t.eval_every},
                    {"norm_every", t.norm_every},
                    {"unitary_fast_path", t.unitary_fast_path},
                    {"steps_per_epoch", t.steps_per_epoch}};
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["sweep"] = Json{{"l2", cfg.sweep.l2}, {"dropout", cfg.sweep.dropout}};
  return j;
}

TaskSuite build_suite(const SuiteConfig& s) {
  try {
    if (s.kind == "blobs") return make_blob_classification(s.blobs);
    if (s.kind == "regression") return make_scale_imbalanced_regression(s.regression);
    if (s.kind == "quadratics") {
      const VectorXd c1 = Eigen::Map<const VectorXd>(s.c1.data(), static_cast<Eigen::Index>(s.c1.size()));
      const VectorXd c2 = Eigen::Map<const VectorXd>(s.c2.data(), static_cast<Eigen::Index>(s.c2.size()));
      return make_conflicting_quadratics(c1, c2, s.kappa);
    }
    if (s.kind == "multimnist") return load_multimnist(s.images, s.labels, s.multimnist);
  } catch (const ValidationError& e) {
    throw UsageError(std::string("suite: ") + e.what());
  } catch (const DimensionError& e) {
    throw UsageError(std::string("suite: ") + e.what());
  }
  throw UsageError("unknown suite kind '" + s.kind + "'");
}

TrainConfig train_config_for(const ExperimentConfig& cfg, const MethodSpec& m, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.method = m.method;
  t.space = m.space;
  t.seed = seed;
  return t;
}

}  // namespace mtopt::cli
