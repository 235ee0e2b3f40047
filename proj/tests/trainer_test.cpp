#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mtopt/min_norm.hpp"
#include "mtopt/trainer.hpp"
#include "oracles.hpp"

using namespace mtopt;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

TrainConfig sgd(Method m, double lr, int epochs, int steps) {
  TrainConfig c;
  c.method = m;
  c.optimizer = OptimizerKind::Sgd;
  c.lr = lr;
  c.lr_decay = 1.0;
  c.epochs = epochs;
  c.steps_per_epoch = steps;
  return c;
}

TaskSuite small_blobs(int tasks, std::uint64_t seed, double separation = 6.0, int samples = 200) {
  BlobSpec b;
  b.tasks = tasks;
  b.classes = 3;
  b.input_dim = 4;
  b.samples = samples;
  b.separation = separation;
  b.seed = seed;
  return make_blob_classification(b);
}

TrainConfig net_config(Method m, Space s = Space::Parameter) {
  TrainConfig c;
  c.method = m;
  c.space = s;
  c.epochs = 3;
  c.batch_size = 32;
  c.lr = 1e-2;
  c.seed = 7;
  return c;
}

std::string csv_without_seconds(const RunRecord& r) {
  std::ostringstream out;
  write_run_csv(r, out);
  std::istringstream in(out.str());
  std::string line, all;
  while (std::getline(in, line)) all += line.substr(0, line.rfind(',')) + "\n";
  return all;
}

}  // namespace

TEST(Config, RejectsInvalidCombinations) {
  TrainConfig c;
  c.method = Method::PcGrad;
  c.space = Space::Representation;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.method = Method::SignAgnosticGradDrop;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.dropout = {1.0};
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.rgd_p = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Config, MethodNamesRoundTrip) {
  for (Method m : all_methods()) EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_EQ(all_methods().size(), 8u);
  EXPECT_THROW(method_from_string("nash"), UsageError);
}

TEST(TrainQuadratic, UnitaryReachesAnalyticOptimum) {
  const auto q = *make_conflicting_quadratics(vec({1, 0}), vec({-1, 2}), 2.0).quadratic;
  const auto r = train_quadratic(q, vec({3, -3}), sgd(Method::Unitary, 0.05, 10, 100));
  ASSERT_TRUE(r.final_theta.has_value());
  EXPECT_LE((*r.final_theta - q.unitary_optimum()).norm(), 1e-4);
}

TEST(TrainQuadratic, UnitaryFollowsClosedFormIterates) {
  // theta_k - theta* = (1 - lr * H)^k (theta_0 - theta*) with H = 2 sum_i scale_i.
  const auto q = *make_conflicting_quadratics(vec({1, 0.5}), vec({-2, 1}), 3.0).quadratic;
  const VectorXd theta0 = vec({0.7, -1.1});
  const double lr = 0.01;
  for (int k : {1, 5, 40}) {
    const auto r = train_quadratic(q, theta0, sgd(Method::Unitary, lr, 1, k));
    const VectorXd expect =
        q.unitary_optimum() + std::pow(1.0 - lr * q.summed_curvature(), k) * (theta0 - q.unitary_optimum());
    EXPECT_LE((*r.final_theta - expect).cwiseAbs().maxCoeff(), 1e-12) << k;
  }
}

TEST(TrainQuadratic, MgdaStopsOnTheParetoSet) {
  const auto q = *make_conflicting_quadratics(vec({1, 0}), vec({-1, 0}), 2.0).quadratic;
  const auto r = train_quadratic(q, vec({0.8, 1.0}), sgd(Method::Mgda, 0.05, 20, 100));
  const VectorXd theta = *r.final_theta;
  EXPECT_LE(min_norm_point(q.grads(theta)).norm, 1e-6);
  EXPECT_GT((theta - q.unitary_optimum()).norm(), 0.1);
  // Terminal ||sum grad L_i|| stays away from zero.
  EXPECT_GT(r.epochs.back().update_norm, 0.1);
}

TEST(TrainQuadratic, SingleTaskEveryMethodMatchesUnitary) {
  QuadraticTasks q;
  q.centers = {vec({1, -2, 0.5})};
  q.scales = {1.5};
  const VectorXd theta0 = vec({-1, 1, 2});
  const auto ref = train_quadratic(q, theta0, sgd(Method::Unitary, 0.05, 2, 50));
  for (Method m : {Method::Mgda, Method::ImtlG, Method::PcGrad, Method::GradDrop, Method::Rlw, Method::Rgd}) {
    TrainConfig c = sgd(m, 0.05, 2, 50);
    c.rgd_p = 1.0;  // p < 1 drops the only task on some steps
    const auto r = train_quadratic(q, theta0, c);
    EXPECT_LE((*r.final_theta - *ref.final_theta).cwiseAbs().maxCoeff(), 1e-12) << to_string(m);
  }
}

TEST(TrainQuadratic, UnitaryEquivalentControlsAreBitwiseUnitary) {
  const auto q = *make_conflicting_quadratics(vec({1, 0}), vec({-1, 2}), 2.0).quadratic;
  const VectorXd theta0 = vec({3, -3});
  const auto ref = train_quadratic(q, theta0, sgd(Method::Unitary, 0.02, 3, 40));
  TrainConfig rgd = sgd(Method::Rgd, 0.02, 3, 40);
  rgd.rgd_p = 1.0;
  TrainConfig rlw = sgd(Method::Rlw, 0.02, 3, 40);
  rlw.rlw_distribution = RlwDistribution::Constant;
  EXPECT_EQ(*train_quadratic(q, theta0, rgd).final_theta, *ref.final_theta);
  EXPECT_EQ(*train_quadratic(q, theta0, rlw).final_theta, *ref.final_theta);

  // Shared centers never produce conflicting gradients.
  QuadraticTasks same;
  same.centers = {vec({1, 2}), vec({1, 2}), vec({1, 2})};
  same.scales = {1.0, 0.3, 2.0};
  const auto a = train_quadratic(same, theta0, sgd(Method::Unitary, 0.02, 3, 40));
  const auto b = train_quadratic(same, theta0, sgd(Method::PcGrad, 0.02, 3, 40));
  EXPECT_EQ(*a.final_theta, *b.final_theta);
}

TEST(TrainQuadratic, BackwardCountsAndRecordShape) {
  const auto q = *make_conflicting_quadratics(vec({1, 0}), vec({-1, 0}), 1.0).quadratic;
  const auto u = train_quadratic(q, vec({0, 1}), sgd(Method::Unitary, 0.01, 4, 25));
  const auto p = train_quadratic(q, vec({0, 1}), sgd(Method::PcGrad, 0.01, 4, 25));
  ASSERT_EQ(u.epochs.size(), 4u);
  EXPECT_EQ(u.epochs.back().backwards, 100u);
  EXPECT_EQ(p.epochs.back().backwards, 200u);
  for (std::size_t e = 1; e < p.epochs.size(); ++e) EXPECT_GE(p.epochs[e].backwards, p.epochs[e - 1].backwards);
}

TEST(TrainQuadratic, DivergenceNamesTheStep) {
  const auto q = *make_conflicting_quadratics(vec({1, 0}), vec({-1, 0}), 1.0).quadratic;
  try {
    train_quadratic(q, vec({0, 1}), sgd(Method::Unitary, 10.0, 10, 100));
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(TrainQuadratic, RejectsRepresentationSpaceAndAdam) {
  const auto q = *make_conflicting_quadratics(vec({1}), vec({-1}), 1.0).quadratic;
  TrainConfig c = sgd(Method::Mgda, 0.1, 1, 1);
  c.space = Space::Representation;
  EXPECT_THROW(train_quadratic(q, vec({0}), c), ValidationError);
  c = sgd(Method::Mgda, 0.1, 1, 1);
  c.optimizer = OptimizerKind::Adam;
  EXPECT_THROW(train_quadratic(q, vec({0}), c), ValidationError);
}

TEST(SelectModel, Examples) {
  auto epochs = [](std::vector<double> v) {
    std::vector<EpochRecord> out;
    for (std::size_t e = 0; e < v.size(); ++e) {
      EpochRecord r;
      r.epoch = static_cast<int>(e);
      r.val_avg = v[e];
      out.push_back(r);
    }
    return out;
  };
  EXPECT_EQ(select_model(epochs({0.1, 0.2, 0.3, 0.4})), 3);
  EXPECT_EQ(select_model(epochs({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 0.8, 0.6})), 7);
  EXPECT_EQ(select_model(epochs({0.1, 0.2, 0.3, 0.8, 0.1, 0.2, 0.3, 0.4, 0.5, 0.8})), 3);
  const double ninf = -std::numeric_limits<double>::infinity();
  EXPECT_EQ(select_model(epochs({ninf, 0.4, ninf, 0.5})), 3);
  EXPECT_THROW(select_model({}), ValidationError);
}

TEST(Evaluate, UntrainedModelIsAtChance) {
  // With zero separation the labels are independent of the inputs, so the
  // number of correct predictions is Binomial(n, 1/k) whatever the model does.
  const auto s = small_blobs(4, 11, 0.0, 4000);
  const auto spec = model_spec_for(s, {16}, 8);
  Rng rng = make_stream(11, 3);
  const auto model = MultiTaskModel::init(spec, rng);
  const auto r = evaluate(model, s, Split::Test);
  const double n = static_cast<double>(s.test.size());
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(p * (1 - p) / n);
  for (int t = 0; t < 4; ++t) EXPECT_NEAR(r.metrics(t), p, 3 * sigma) << t;
}

TEST(Evaluate, DeterministicAndDropoutFree) {
  const auto s = small_blobs(2, 12);
  auto spec = model_spec_for(s, {8}, 4);
  Rng rng = make_stream(12, 3);
  auto model = MultiTaskModel::init(spec, rng);
  model.set_dropout({0.5});
  const auto a = evaluate(model, s, Split::Val);
  const auto b = evaluate(model, s, Split::Val);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.metrics, b.metrics);
  model.set_dropout({});
  EXPECT_EQ(evaluate(model, s, Split::Val).losses, a.losses);
}

TEST(Evaluate, RegressionMetricIsNegatedLoss) {
  RegressionSpec rs;
  rs.samples = 100;
  const auto s = make_scale_imbalanced_regression(rs);
  Rng rng = make_stream(1, 3);
  const auto model = MultiTaskModel::init(model_spec_for(s, {4}, 4), rng);
  const auto r = evaluate(model, s, Split::Test);
  EXPECT_EQ(r.metrics(1), -r.losses(1));
}

TEST(Train, SeparableSuiteReachesHighAccuracy) {
  BlobSpec b;
  b.tasks = 2;
  b.samples = 1000;
  b.seed = 4;
  const auto s = make_blob_classification(b);
  TrainConfig c;
  c.epochs = 30;
  c.batch_size = 64;
  c.lr = 1e-2;
  c.seed = 4;
  const auto r = train(model_spec_for(s, {32}, 16), s, c);
  EXPECT_LT(r.record.epochs.back().total_loss, 0.05);
  EXPECT_GT(evaluate(r.selected, s, Split::Test).average, 0.99);
}

TEST(Train, SameSeedGivesIdenticalRecords) {
  const auto s = small_blobs(3, 5);
  for (auto [m, space] : {std::pair{Method::GradDrop, Space::Representation}, std::pair{Method::PcGrad, Space::Parameter},
                          std::pair{Method::Rlw, Space::Parameter}}) {
    TrainConfig c = net_config(m, space);
    c.dropout = {0.2};
    c.l2 = 1e-3;
    const auto a = train(model_spec_for(s, {8}, 4), s, c);
    const auto b = train(model_spec_for(s, {8}, 4), s, c);
    for (std::size_t e = 0; e < a.record.epochs.size(); ++e)
      ASSERT_EQ(a.record.epochs[e].train_losses, b.record.epochs[e].train_losses);
    EXPECT_EQ(csv_without_seconds(a.record), csv_without_seconds(b.record));
    EXPECT_EQ(a.model.trunk_params(), b.model.trunk_params());
  }
}

TEST(Train, SingleTaskEveryMethodMatchesUnitary) {
  const auto s = small_blobs(1, 6);
  const auto spec = model_spec_for(s, {8}, 4);
  TrainConfig base = net_config(Method::Unitary);
  base.dropout = {0.3};
  const auto ref = train(spec, s, base);
  const std::vector<std::pair<Method, Space>> cases = {
      {Method::Mgda, Space::Parameter},           {Method::ImtlG, Space::Parameter},
      {Method::PcGrad, Space::Parameter},         {Method::GradDrop, Space::Parameter},
      {Method::Rlw, Space::Parameter},            {Method::Rgd, Space::Parameter},
      {Method::Unitary, Space::Representation},   {Method::Mgda, Space::Representation},
      {Method::ImtlG, Space::Representation},     {Method::SignAgnosticGradDrop, Space::Representation}};
  // Representation-space GradDrop pools sign purity over the batch, so with one
  // task it still drops samples whose sign disagrees with the pooled sign.
  for (auto [m, space] : cases) {
    TrainConfig c = net_config(m, space);
    c.dropout = base.dropout;
    c.rgd_p = 1.0;
    c.sign_agnostic_p = 1.0;
    const auto r = train(spec, s, c);
    EXPECT_LE((r.model.trunk_params() - ref.model.trunk_params()).cwiseAbs().maxCoeff(), 1e-8)
        << to_string(m) << " " << to_string(space);
  }
}

TEST(Train, ControlsReproduceUnitaryExactly) {
  const auto s = small_blobs(3, 8);
  const auto spec = model_spec_for(s, {8}, 4);
  TrainConfig base = net_config(Method::Unitary);
  base.unitary_fast_path = false;
  const auto ref = train(spec, s, base);
  TrainConfig rgd = net_config(Method::Rgd);
  rgd.rgd_p = 1.0;
  TrainConfig rlw = net_config(Method::Rlw);
  rlw.rlw_distribution = RlwDistribution::Constant;
  EXPECT_EQ(train(spec, s, rgd).model.trunk_params(), ref.model.trunk_params());
  EXPECT_EQ(train(spec, s, rlw).model.trunk_params(), ref.model.trunk_params());
}

TEST(Train, FastPathMatchesPerTaskSum) {
  const auto s = small_blobs(3, 9);
  Rng rng = make_stream(9, 3);
  const auto model = MultiTaskModel::init(model_spec_for(s, {8}, 4), rng);
  for (double l2 : {0.0, 1e-2}) {
    TrainConfig fast = net_config(Method::Unitary);
    fast.l2 = l2;
    fast.dropout = {0.4};
    TrainConfig slow = fast;
    slow.unitary_fast_path = false;
    MultiTaskModel m = model;
    m.set_dropout(fast.dropout);
    LoopState sa = make_loop_state(fast, 3), sb = make_loop_state(slow, 3);
    for (int step = 0; step < 5; ++step) {
      const auto a = compute_step(m, s.train, s.kinds, fast, sa, true);
      const auto b = compute_step(m, s.train, s.kinds, slow, sb, true);
      ASSERT_LE((a.trunk_direction - b.trunk_direction).cwiseAbs().maxCoeff(), 1e-10);
      ASSERT_NEAR(a.sum_grad_norm, b.sum_grad_norm, 1e-10);
      EXPECT_EQ(a.count.trunk, 1u);
      EXPECT_EQ(b.count.trunk, 3u);
    }
  }
}

TEST(Train, BackwardCountsPerStep) {
  const auto s = small_blobs(3, 10);
  const auto spec = model_spec_for(s, {8}, 4);
  const std::uint64_t steps = 3 * ((s.train.size() + 31) / 32);
  const auto u = train(spec, s, net_config(Method::Unitary));
  EXPECT_EQ(u.record.epochs.back().backwards, steps);
  EXPECT_EQ(u.record.epochs.back().head_backwards, 0u);
  const auto p = train(spec, s, net_config(Method::PcGrad));
  EXPECT_EQ(p.record.epochs.back().backwards, 3 * steps);
  const auto r = train(spec, s, net_config(Method::Mgda, Space::Representation));
  EXPECT_EQ(r.record.epochs.back().backwards, steps);
  EXPECT_EQ(r.record.epochs.back().head_backwards, 3 * steps);
}

TEST(Train, EvalCadenceAndSelection) {
  const auto s = small_blobs(2, 13);
  TrainConfig c = net_config(Method::Unitary);
  c.epochs = 5;
  c.eval_every = 2;
  const auto r = train(model_spec_for(s, {8}, 4), s, c);
  ASSERT_EQ(r.record.epochs.size(), 5u);
  EXPECT_TRUE(std::isinf(r.record.epochs[0].val_avg));
  EXPECT_FALSE(std::isinf(r.record.epochs[1].val_avg));
  EXPECT_FALSE(std::isinf(r.record.epochs[4].val_avg));
  EXPECT_FALSE(std::isinf(r.record.epochs[static_cast<std::size_t>(r.record.selected_epoch)].val_avg));
  EXPECT_EQ(r.record.selected_epoch, select_model(r.record.epochs));
  EXPECT_EQ(r.record.test_avg, evaluate(r.selected, s, Split::Test).average);
}

TEST(Train, DivergenceIsTyped) {
  RegressionSpec rs;
  rs.ratio = 100.0;
  rs.samples = 200;
  const auto s = make_scale_imbalanced_regression(rs);
  TrainConfig c = net_config(Method::Unitary);
  c.optimizer = OptimizerKind::Sgd;
  c.lr = 1e3;
  c.epochs = 50;
  EXPECT_THROW(train(model_spec_for(s, {8}, 4, Activation::Identity), s, c), DivergenceError);
}

TEST(Train, RejectsAnalyticSuite) {
  const auto q = make_conflicting_quadratics(vec({1}), vec({-1}), 1.0);
  ModelSpec spec;
  spec.head_outputs = {1, 1};
  EXPECT_THROW(train(spec, q, net_config(Method::Unitary)), ValidationError);
}

TEST(RunCsv, HeaderAndRows) {
  const auto h = run_csv_header(2);
  const std::vector<std::string> want = {"epoch",  "loss_task_0",  "loss_task_1", "loss_total",
                                         "val_task_0", "val_task_1", "val_avg",     "update_norm",
                                         "backwards",  "head_backwards", "stalls",   "seconds"};
  EXPECT_EQ(h, want);
  const auto s = small_blobs(2, 14);
  TrainConfig c = net_config(Method::Mgda);
  const auto r = train(model_spec_for(s, {8}, 4), s, c);
  std::ostringstream out;
  write_run_csv(r.record, out);
  std::istringstream in(out.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), static_cast<long>(want.size() - 1));
  }
  EXPECT_EQ(lines, 1 + c.epochs);
}
