#include "verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "mtopt/aggregators.hpp"
#include "mtopt/certificates.hpp"
#include "mtopt/errors.hpp"
#include "mtopt/net.hpp"

namespace mtopt::cli {

Json gradient_set_json(const GradientSet<double>& gs) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < gs.task_count(); ++i) {
    std::vector<double> r(gs.rows().row(i).data(), gs.rows().row(i).data() + gs.dim());
    rows.push_back(r);
  }
  return Json{{"space", to_string(gs.space())}, {"rows", rows}};
}

namespace {

using GS = GradientSet<double>;
using Rows = RowMatrix<double>;

/// PCGrad with the projection applied in the wrong direction. The trace is the
/// one a correct projection would record, so the rescaling identity breaks.
AggregateUpdate<double> pcgrad_sign_fault(const GS& gs, Rng& rng) {
  const Eigen::Index m = gs.task_count();
  const auto& rows = gs.rows();
  const VectorXd sq = rows.rowwise().squaredNorm();
  PCGradTrace<double> trace;
  trace.coeffs = MatrixXd::Identity(m, m);
  trace.orders.resize(static_cast<std::size_t>(m));
  Rows projected = rows;
  for (Eigen::Index i = 0; i < m; ++i) {
    auto& order = trace.orders[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) order.push_back(j);
    shuffle(order, rng);
    for (Eigen::Index j : order) {
      if (sq(j) == 0.0) continue;
      const double c = -projected.row(i).dot(rows.row(j)) / sq(j);
      if (c > 0.0) {
        projected.row(i) -= c * rows.row(j);
        trace.coeffs(i, j) += c;
      }
    }
  }
  AggregateUpdate<double> out;
  out.direction = negated_sum<double>(projected);
  out.trace = std::move(trace);
  return out;
}

class Suite {
 public:
  explicit Suite(const VerifyOptions& opts) : opts_(opts), rng_(make_stream(opts.seed, 0x7e51)) {}

  double tol(double t) const { return t * opts_.tolerance_scale; }

  GS random_set(Eigen::Index m, Eigen::Index d) {
    Rows r(m, d);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < d; ++j) r(i, j) = standard_normal(rng_);
    return GS(std::move(r), Space::Parameter);
  }

  Eigen::Index between(Eigen::Index lo, Eigen::Index hi) {
    return lo + static_cast<Eigen::Index>(uniform_index(rng_, static_cast<std::uint64_t>(hi - lo + 1)));
  }

  /// Rows whose convex hull contains the origin: the last row cancels a positive
  /// combination of the others.
  GS zero_in_hull(Eigen::Index m, Eigen::Index d) {
    GS base = random_set(m, d);
    Rows r = base.rows();
    VectorXd acc = VectorXd::Zero(d);
    for (Eigen::Index i = 0; i + 1 < m; ++i) acc += (0.5 + uniform01(rng_)) * r.row(i).transpose();
    r.row(m - 1) = -(acc / (0.5 + uniform01(rng_))).transpose();
    return GS(std::move(r), Space::Parameter);
  }

  AggregateUpdate<double> run_pcgrad(const GS& gs) {
    return opts_.inject_fault == "pcgrad-sign" ? pcgrad_sign_fault(gs, rng_) : pcgrad(gs, rng_);
  }

  Rng& rng() { return rng_; }

 private:
  VerifyOptions opts_;
  Rng rng_;
};

PropertyResult named(std::string name) {
  PropertyResult r;
  r.name = std::move(name);
  return r;
}

PropertyResult fail(PropertyResult r, std::string detail, std::optional<GS> gs = std::nullopt) {
  r.pass = false;
  r.detail = std::move(detail);
  r.counterexample = std::move(gs);
  return r;
}

PropertyResult minnorm_kkt(Suite& s) {
  PropertyResult r = named("minnorm.optimality");
  for (int c = 0; c < 200; ++c, ++r.cases) {
    const GS gs = s.random_set(s.between(2, 6), s.between(2, 6));
    const auto sol = min_norm_point(gs);
    const double obj = sol.point.squaredNorm();
    const double worst = (gs.rows() * sol.point).minCoeff();
    if (worst < obj - s.tol(1e-6)) return fail(r, "a vertex improves on the min-norm point", gs);
    for (std::size_t k = 1; k < sol.objective_trace.size(); ++k)
      if (sol.objective_trace[k] > sol.objective_trace[k - 1] + s.tol(1e-15))
        return fail(r, "objective increased during Frank-Wolfe", gs);
  }
  return r;
}

PropertyResult affine_orthogonality(Suite& s) {
  PropertyResult r = named("affine.orthogonality");
  for (int c = 0; c < 200; ++c, ++r.cases) {
    const GS gs = s.random_set(s.between(2, 4), s.between(4, 8));
    const auto a = affine_min_norm(gs);
    for (Eigen::Index i = 1; i < gs.task_count(); ++i) {
      const double dot = (gs.rows().row(i) - gs.rows().row(0)).dot(a.point);
      if (std::abs(dot) > s.tol(1e-8)) return fail(r, "affine point not orthogonal to row differences", gs);
    }
    if (min_norm_point(gs).norm < a.point.norm() - s.tol(1e-9))
      return fail(r, "convex min-norm below affine min-norm", gs);
  }
  return r;
}

PropertyResult mgda_certificate(Suite& s) {
  PropertyResult r = named("mgda.certificate");
  for (int c = 0; c < 100; ++c, ++r.cases) {
    const bool inside = c < 50;
    const Eigen::Index m = s.between(2, 4);
    const GS gs = inside ? s.zero_in_hull(m, s.between(2, 5)) : s.random_set(m, s.between(2, 5));
    const double g = mgda(gs).direction.norm();
    const double cert = min_norm_point(gs).norm;
    if (inside && g > s.tol(1e-6)) return fail(r, "origin in hull but ||g|| = " + std::to_string(g), gs);
    if ((g <= s.tol(1e-6)) != (cert <= s.tol(1e-6))) return fail(r, "mgda output and certificate disagree", gs);
  }
  return r;
}

PropertyResult imtl_equal_cosine(Suite& s) {
  PropertyResult r = named("imtl.equal_cosine");
  for (int c = 0; c < 200; ++c) {
    const Eigen::Index m = s.between(2, 5);
    const GS gs = s.random_set(m, s.between(m, 8));
    const auto upd = imtl_g(gs);
    if (std::abs(upd.weights->sum() - 1.0) > s.tol(1e-10)) return fail(r, "weights do not sum to 1", gs);
    const double gn = upd.direction.norm();
    if (gn <= 1e-12) continue;
    ++r.cases;
    const VectorXd cos = (gs.rows() * upd.direction).cwiseQuotient(gs.row_norms()) / gn;
    if (cos.maxCoeff() - cos.minCoeff() > s.tol(1e-8)) return fail(r, "cosines differ", gs);
  }
  return r;
}

PropertyResult imtl_affine(Suite& s) {
  PropertyResult r = named("imtl.affine_certificate");
  for (int c = 0; c < 100; ++c, ++r.cases) {
    GS gs = s.random_set(2, 2);
    const int kind = c % 4;
    if (kind == 0) {
      // Opposite directions with unequal lengths.
      Rows rows = gs.rows();
      rows.row(1) = -(1.0 + 3.0 * uniform01(s.rng())) * rows.row(0);
      gs = GS(std::move(rows), Space::Parameter);
    } else if (kind == 1) {
      gs = s.zero_in_hull(3, 2);
    } else if (kind == 2) {
      gs = s.random_set(3, 5);
    } else {
      gs = s.random_set(2, 3);
    }
    const double g = imtl_g(gs).direction.norm();
    const auto units = normalized_nonzero_rows(gs);
    const double cert = affine_min_norm(*units).point.norm();
    if ((g <= s.tol(1e-6)) != (cert <= s.tol(1e-6)))
      return fail(r, "||g|| = " + std::to_string(g) + " but affine certificate = " + std::to_string(cert), gs);
  }
  return r;
}

PropertyResult pcgrad_identity(Suite& s) {
  PropertyResult r = named("pcgrad.rescaling_identity");
  for (int c = 0; c < 500; ++c, ++r.cases) {
    const Eigen::Index m = s.between(2, 6);
    const GS gs = s.random_set(m, s.between(2, 6));
    const auto upd = s.run_pcgrad(gs);
    const auto& tr = std::get<PCGradTrace<double>>(upd.trace);
    VectorXd rebuilt = VectorXd::Zero(gs.dim());
    for (Eigen::Index i = 0; i < m; ++i) rebuilt += tr.coeffs.col(i).sum() * gs.rows().row(i).transpose();
    if ((rebuilt + upd.direction).cwiseAbs().maxCoeff() > s.tol(1e-9))
      return fail(r, "-g differs from sum_i (1 + sum_j d_ji) g_i", gs);
    const VectorXd norms = gs.row_norms();
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index i = 0; i < m; ++i) {
        if (i == j) continue;
        const double d = tr.coeffs(j, i);
        if (d < 0.0 || d > norms(j) / norms(i) + s.tol(1e-9)) return fail(r, "d_ji outside its bound", gs);
      }
  }
  return r;
}

PropertyResult pcgrad_two_task(Suite& s) {
  PropertyResult r = named("pcgrad.two_task");
  for (int c = 0; c < 100; ++c, ++r.cases) {
    GS gs = s.random_set(2, s.between(2, 5));
    if (c % 2 == 0) {
      Rows rows = gs.rows();
      rows.row(1) = -std::ldexp(1.0, static_cast<int>(s.between(-3, 3))) * rows.row(0);
      gs = GS(std::move(rows), Space::Parameter);
      const auto upd = s.run_pcgrad(gs);
      if (!(upd.direction.array() == 0.0).all()) return fail(r, "opposite gradients but g != 0", gs);
    } else {
      Rows rows = gs.rows().cwiseAbs();
      gs = GS(std::move(rows), Space::Parameter);
      if (s.run_pcgrad(gs).direction != unitary(gs).direction)
        return fail(r, "non-conflicting pcgrad differs from unitary", gs);
    }
  }
  return r;
}

/// Two-sided normal quantile z with P(|Z| > z) = alpha, by bisection on erfc.
double two_sided_z(double alpha) {
  double lo = 0.0, hi = 40.0;
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > alpha ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Every coordinate of every set is tested, so the 3 sigma level is applied to
// the whole family (Bonferroni) rather than to each coordinate separately.
PropertyResult graddrop_expectation(Suite& s) {
  PropertyResult r = named("graddrop.expectation");
  constexpr int kSets = 20;
  constexpr int kSamples = 10000;
  constexpr Eigen::Index kDim = 3;
  const double z = two_sided_z(std::erfc(3.0 / std::sqrt(2.0)) / (kSets * kDim));
  for (int c = 0; c < kSets; ++c, ++r.cases) {
    const GS gs = s.random_set(3, kDim);
    const VectorXd p = sign_purity<double>(gs.rows());
    const VectorXd pos = gs.rows().cwiseMax(0.0).colwise().sum().transpose();
    const VectorXd neg = gs.rows().cwiseMin(0.0).colwise().sum().transpose();
    const VectorXd expected = p.cwiseProduct(pos) + (VectorXd::Ones(kDim) - p).cwiseProduct(neg);
    VectorXd sum = VectorXd::Zero(kDim), sq = VectorXd::Zero(kDim);
    for (int k = 0; k < kSamples; ++k) {
      const VectorXd x = -graddrop(gs, s.rng()).direction;
      sum += x;
      sq += x.cwiseProduct(x);
    }
    const VectorXd mean = sum / kSamples;
    for (Eigen::Index j = 0; j < kDim; ++j) {
      const double var = std::max(0.0, sq(j) / kSamples - mean(j) * mean(j));
      const double se = std::sqrt(var / kSamples);
      if (std::abs(mean(j) - expected(j)) > s.tol(z * se) + 1e-12 * s.tol(1.0))
        return fail(r, "Monte Carlo mean outside the family-wise 3 sigma band", gs);
    }
  }
  return r;
}

PropertyResult rgd_zero(Suite& s) {
  PropertyResult r = named("rgd.zero_iff_all_rows_zero");
  for (int c = 0; c < 20; ++c, ++r.cases) {
    const bool zero = c % 2 == 0;
    const Eigen::Index m = s.between(1, 4);
    GS gs = zero ? GS(Rows::Zero(m, 3), Space::Parameter) : s.random_set(m, 3);
    bool always_zero = true;
    for (int k = 0; k < 1000; ++k)
      if (!(rgd(gs, 0.5, s.rng()).direction.array() == 0.0).all()) always_zero = false;
    if (always_zero != zero) return fail(r, "zero-update pattern does not match all-zero rows", gs);
  }
  return r;
}

PropertyResult certificate_nesting(Suite& s) {
  PropertyResult r = named("certificates.nesting");
  for (int c = 0; c < 500; ++c, ++r.cases) {
    const Eigen::Index m = s.between(2, 4);
    GS gs = c % 3 == 0 ? s.zero_in_hull(m, s.between(2, 4)) : s.random_set(m, s.between(2, 4));
    const double tau = 1e-6;
    const auto rep = stationarity_report(gs, tau);
    if (rep.joint_minimum() && !rep.pareto_stationary()) return fail(r, "joint minimum but not Pareto-stationary", gs);
    if (rep.unitary_stationary() && rep.convex_cert > tau + s.tol(1e-12))
      return fail(r, "unitary-stationary but convex certificate above tau", gs);
    if (rep.pareto_stationary() && rep.affine_cert > rep.affine_tolerance + s.tol(1e-9))
      return fail(r, "Pareto-stationary but affine certificate above its tolerance", gs);
  }
  return r;
}

PropertyResult certificate_permutation(Suite& s) {
  PropertyResult r = named("certificates.permutation_invariance");
  for (int c = 0; c < 100; ++c, ++r.cases) {
    const Eigen::Index m = s.between(2, 5);
    const GS gs = s.random_set(m, s.between(2, 5));
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    shuffle(perm, s.rng());
    Rows pr(m, gs.dim());
    for (Eigen::Index i = 0; i < m; ++i) pr.row(i) = gs.rows().row(perm[static_cast<std::size_t>(i)]);
    const auto a = stationarity_report(gs);
    const auto b = stationarity_report(GS(std::move(pr), Space::Parameter));
    const double t = s.tol(1e-9);
    if (std::abs(a.unitary_norm - b.unitary_norm) > t || std::abs(a.convex_cert - b.convex_cert) > t ||
        std::abs(a.affine_cert - b.affine_cert) > t || std::abs(a.joint_cert - b.joint_cert) > t)
      return fail(r, "report changed under row permutation", gs);
  }
  return r;
}

struct SmallProblem {
  MultiTaskModel model;
  Batch batch;
  std::vector<LossKind> kinds;
};

SmallProblem small_problem(Rng& rng) {
  ModelSpec spec;
  spec.input_dim = 3;
  spec.trunk_hidden = {4};
  spec.repr_dim = 3;
  spec.head_outputs = {2, 1};
  spec.activation = Activation::Tanh;
  SmallProblem p{MultiTaskModel::init(spec, rng), {}, {LossKind::CrossEntropy, LossKind::Mse}};
  p.batch.inputs = MatrixXd(5, 3);
  for (Eigen::Index i = 0; i < p.batch.inputs.size(); ++i) p.batch.inputs(i) = standard_normal(rng);
  MatrixXd cls(5, 1), y(5, 1);
  for (Eigen::Index n = 0; n < 5; ++n) {
    cls(n, 0) = static_cast<double>(uniform_index(rng, 2));
    y(n, 0) = standard_normal(rng);
  }
  p.batch.targets = {cls, y};
  return p;
}

PropertyResult gradient_exactness(Suite& s) {
  PropertyResult r = named("net.gradient_exactness");
  for (int c = 0; c < 5; ++c, ++r.cases) {
    SmallProblem p = small_problem(s.rng());
    const auto pg = per_task_param_grads(p.model, p.batch, p.kinds, 0.0, DropoutMode::Eval, nullptr);
    const VectorXd theta = p.model.trunk_params();
    MultiTaskModel probe = p.model;
    const double eps = 1e-5;
    for (int t = 0; t < 2; ++t) {
      auto loss = [&](const VectorXd& th) {
        probe.set_trunk_params(th);
        const auto f = forward(probe, p.batch.inputs, t, DropoutMode::Eval, nullptr);
        return task_loss(f.predictions, p.batch.targets[static_cast<std::size_t>(t)], p.kinds[static_cast<std::size_t>(t)]);
      };
      for (Eigen::Index k = 0; k < theta.size(); ++k) {
        VectorXd a = theta, b = theta;
        a(k) += eps;
        b(k) -= eps;
        const double fd = (loss(a) - loss(b)) / (2 * eps);
        const double an = pg.trunk.rows()(t, k);
        if (std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) > s.tol(1e-4))
          return fail(r, "finite differences disagree at parameter " + std::to_string(k), pg.trunk);
      }
    }
    const auto sg = summed_grads(p.model, p.batch, p.kinds, 0.0, DropoutMode::Eval, nullptr);
    const VectorXd total = -negated_sum<double>(pg.trunk.rows());
    if ((total - sg.trunk).cwiseAbs().maxCoeff() > s.tol(1e-10))
      return fail(r, "per-task sum differs from the single-backward gradient", pg.trunk);
  }
  return r;
}

}  // namespace

std::vector<PropertyResult> run_verify(const VerifyOptions& opts) {
  if (!(opts.tolerance_scale >= 0.0)) throw UsageError("--tolerance-scale must be >= 0");
  if (!opts.inject_fault.empty() && opts.inject_fault != "pcgrad-sign")
    throw UsageError("unknown fault '" + opts.inject_fault + "'");
  Suite s(opts);
  std::vector<std::function<PropertyResult(Suite&)>> props{
      minnorm_kkt,         affine_orthogonality,  mgda_certificate, imtl_equal_cosine,   imtl_affine,
      pcgrad_identity,     pcgrad_two_task,       graddrop_expectation, rgd_zero,       certificate_nesting,
      certificate_permutation, gradient_exactness};
  std::vector<PropertyResult> out;
  for (auto& p : props) out.push_back(p(s));
  return out;
}

}  // namespace mtopt::cli
