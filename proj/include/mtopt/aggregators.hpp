#pragma once

// Gradient aggregators: each maps a GradientSet (plus a generator where the
// method is stochastic) to a descent direction g with theta <- theta + lr * g.

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mtopt/grad_core.hpp"
#include "mtopt/min_norm.hpp"
#include "mtopt/random.hpp"

namespace mtopt {

/// g = -sum_i grad_i.
template <typename Scalar>
AggregateUpdate<Scalar> unitary(const GradientSet<Scalar>& gs) {
  AggregateUpdate<Scalar> out;
  out.direction = negated_sum<Scalar>(gs.rows());
  out.weight_kind = WeightKind::Unitary;
  out.weights = Vector<Scalar>::Ones(gs.task_count());
  return out;
}

/// Divides each row by (||row|| * loss), the normalization used before MGDA.
template <typename Scalar>
GradientSet<Scalar> mgda_rescale(const GradientSet<Scalar>& gs, const Vector<Scalar>& losses) {
  if (losses.size() != gs.task_count()) throw DimensionError("mgda_rescale: one loss per task");
  const Vector<Scalar> norms = gs.row_norms();
  Vector<Scalar> factors(gs.task_count());
  for (Eigen::Index i = 0; i < gs.task_count(); ++i) {
    if (!(losses(i) > Scalar(0))) {
      throw DegenerateInputError("mgda_rescale: loss of task " + std::to_string(i) +
                                 " is not positive");
    }
    if (norms(i) == Scalar(0)) {
      throw DegenerateInputError("mgda_rescale: zero gradient for task " + std::to_string(i));
    }
    factors(i) = Scalar(1) / (norms(i) * losses(i));
  }
  return gs.with_rows_scaled(factors);
}

/// g = -(min-norm element of the convex hull of the rows).
template <typename Scalar>
AggregateUpdate<Scalar> mgda(const GradientSet<Scalar>& gs, const MinNormConfig& qp = {}) {
  auto sol = min_norm_point(gs, qp);
  AggregateUpdate<Scalar> out;
  out.direction = combine(gs, sol.weights.values());
  out.weight_kind = WeightKind::Simplex;
  out.weights = sol.weights.values();
  return out;
}

struct ImtlOptions {
  /// Zero rows get weight 0 and the rest are solved without them. When false a
  /// zero row is a DegenerateInputError.
  bool exclude_zero_rows = false;
};

namespace detail {

/// IMTL-G weights for rows with nonzero norm. Writing alpha_1 = 1 - sum_{k>1} alpha_k,
/// the equal-projection conditions g . (u_1 - u_i) = 0 (u = unit rows) become the
/// (m-1)x(m-1) system A beta = b with A_ik = (r_k - r_1).(u_1 - u_i), b_i = -r_1.(u_1 - u_i).
template <typename Scalar>
Vector<Scalar> imtl_weights(const RowMatrix<Scalar>& rows, bool& fallback) {
  const Eigen::Index m = rows.rows();
  fallback = false;
  if (m == 1) return Vector<Scalar>::Ones(1);

  const Vector<Scalar> norms = rows.rowwise().norm();
  const RowMatrix<Scalar> units = norms.cwiseInverse().asDiagonal() * rows;
  const RowMatrix<Scalar> d_rows = rows.bottomRows(m - 1).rowwise() - rows.row(0);
  const RowMatrix<Scalar> u_diff = (-units.bottomRows(m - 1)).rowwise() + units.row(0);

  const Matrix<Scalar> a = u_diff * d_rows.transpose();
  const Vector<Scalar> b = -(u_diff * rows.row(0).transpose());

  const Vector<Scalar> uniform_tail = Vector<Scalar>::Constant(m - 1, Scalar(1) / Scalar(m));
  Eigen::CompleteOrthogonalDecomposition<Matrix<Scalar>> cod;
  cod.setThreshold(Scalar(1e-10));
  cod.compute(a);

  Vector<Scalar> beta;
  if (cod.rank() == m - 1) {
    beta = cod.solve(b);
  } else {
    // Rank deficient: take the solution closest to uniform weights if the system
    // is consistent, otherwise fall back to uniform weights.
    fallback = true;
    beta = uniform_tail + cod.solve(b - a * uniform_tail);
    const Scalar residual = (a * beta - b).norm();
    const Scalar scale = std::max(Scalar(1), b.norm() + a.norm());
    if (!all_finite(beta) || residual > Scalar(1e-9) * scale) beta = uniform_tail;
  }
  Vector<Scalar> alpha(m);
  alpha(0) = Scalar(1) - beta.sum();
  alpha.tail(m - 1) = beta;
  return alpha;
}

}  // namespace detail

/// IMTL-G: the direction in the affine span of the rows (weights summing to one)
/// whose projection onto every normalized task gradient is the same.
template <typename Scalar>
AggregateUpdate<Scalar> imtl_g(const GradientSet<Scalar>& gs, const ImtlOptions& opts = {}) {
  const Eigen::Index m = gs.task_count();
  const Vector<Scalar> norms = gs.row_norms();
  std::vector<Eigen::Index> live;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (norms(i) > Scalar(0)) {
      live.push_back(i);
    } else if (!opts.exclude_zero_rows) {
      throw DegenerateInputError("imtl_g: zero gradient for task " + std::to_string(i));
    }
  }

  AggregateUpdate<Scalar> out;
  out.weight_kind = WeightKind::Affine;
  Vector<Scalar> alpha = Vector<Scalar>::Zero(m);
  if (live.empty()) {
    alpha.setConstant(Scalar(1) / Scalar(m));
    out.used_fallback = true;
  } else {
    RowMatrix<Scalar> sub(static_cast<Eigen::Index>(live.size()), gs.dim());
    for (std::size_t k = 0; k < live.size(); ++k)
      sub.row(static_cast<Eigen::Index>(k)) = gs.rows().row(live[k]);
    bool fallback = false;
    const Vector<Scalar> w = detail::imtl_weights<Scalar>(sub, fallback);
    for (std::size_t k = 0; k < live.size(); ++k) alpha(live[k]) = w(static_cast<Eigen::Index>(k));
    out.used_fallback = fallback;
  }
  out.direction = combine(gs, alpha);
  out.weights = std::move(alpha);
  return out;
}

/// IMTL-L state: learned log-scales s_i for the objective sum_i (e^{s_i} L_i - s_i).
struct LossScaleState {
  Vector<double> log_scales;
  double step_size = 0.1;

  static LossScaleState zeros(Eigen::Index m, double step_size = 0.1) {
    return {Vector<double>::Zero(m), step_size};
  }
};

struct LossScaleStep {
  LossScaleState state;
  /// e^{s_i} at the pre-step state; these multiply the task losses for this update.
  Vector<double> scales;
  /// Some s_i left [-20, 20] and was clamped.
  bool clamped = false;
};

inline constexpr double kLogScaleLimit = 20.0;

/// One gradient step on s: s_i <- s_i - step * (e^{s_i} L_i - 1).
inline LossScaleStep imtl_l_step(const LossScaleState& state, const Vector<double>& losses) {
  if (losses.size() != state.log_scales.size()) throw DimensionError("imtl_l_step: one loss per task");
  if (!all_finite(losses)) throw ValidationError("imtl_l_step: non-finite loss");
  if (!(state.step_size > 0)) throw ValidationError("imtl_l_step: step size must be > 0");
  LossScaleStep out{state, state.log_scales.array().exp().matrix(), false};
  for (Eigen::Index i = 0; i < losses.size(); ++i) {
    double s = state.log_scales(i) - state.step_size * (std::exp(state.log_scales(i)) * losses(i) - 1.0);
    if (!std::isfinite(s) || std::abs(s) > kLogScaleLimit) {
      s = std::isnan(s) ? 0.0 : std::clamp(s, -kLogScaleLimit, kLogScaleLimit);
      out.clamped = true;
    }
    out.state.log_scales(i) = s;
  }
  return out;
}

/// PCGrad. Each task gradient is projected, in a random order over the other
/// tasks, onto the normal plane of every task gradient it conflicts with.
template <typename Scalar>
AggregateUpdate<Scalar> pcgrad(const GradientSet<Scalar>& gs, Rng& rng) {
  const Eigen::Index m = gs.task_count();
  const auto& rows = gs.rows();
  const Vector<Scalar> sq_norms = rows.rowwise().squaredNorm();

  PCGradTrace<Scalar> trace;
  trace.coeffs = Matrix<Scalar>::Identity(m, m);
  trace.orders.resize(static_cast<std::size_t>(m));
  RowMatrix<Scalar> projected = rows;

  for (Eigen::Index i = 0; i < m; ++i) {
    auto& order = trace.orders[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) order.push_back(j);
    shuffle(order, rng);
    for (const Eigen::Index j : order) {
      if (sq_norms(j) == Scalar(0)) continue;
      const Scalar c = -projected.row(i).dot(rows.row(j)) / sq_norms(j);
      if (c > Scalar(0)) {
        projected.row(i) += c * rows.row(j);
        trace.coeffs(i, j) += c;
      }
    }
  }

  AggregateUpdate<Scalar> out;
  out.direction = negated_sum<Scalar>(projected);
  out.weight_kind = WeightKind::None;
  out.trace = std::move(trace);
  return out;
}

struct GradDropOptions {
  /// false: keep a positive entry when u < p and a negative one when u > p.
  /// true: the opposite assignment.
  bool flip = false;
};

/// Sign purity p = (1 + sum_i x_i / sum_i |x_i|) / 2 per column; 0/0 gives 0.5.
template <typename Scalar>
Vector<Scalar> sign_purity(const RowMatrix<Scalar>& rows) {
  const Vector<Scalar> sum = rows.colwise().sum().transpose();
  const Vector<Scalar> abs_sum = rows.cwiseAbs().colwise().sum().transpose();
  Vector<Scalar> p(rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    p(j) = abs_sum(j) > Scalar(0) ? Scalar(0.5) * (Scalar(1) + sum(j) / abs_sum(j)) : Scalar(0.5);
    p(j) = std::clamp(p(j), Scalar(0), Scalar(1));
  }
  return p;
}

namespace detail {

/// Draws the uniforms and keep-masks for the given purity, broadcasting purity
/// over blocks of purity.size() columns.
template <typename Scalar>
GradDropSample<Scalar> draw_graddrop(const RowMatrix<Scalar>& rows, Vector<Scalar> purity,
                                     const GradDropOptions& opts, Rng& rng) {
  const Eigen::Index m = rows.rows();
  const Eigen::Index d = rows.cols();
  const Eigen::Index width = purity.size();
  GradDropSample<Scalar> s;
  s.uniforms.resize(m, d);
  s.masks.resize(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const Scalar u = Scalar(uniform01(rng));
      const Scalar p = purity(j % width);
      s.uniforms(i, j) = u;
      const Scalar x = rows(i, j);
      bool keep = true;
      if (x > Scalar(0)) keep = opts.flip ? (u > p) : (u < p);
      else if (x < Scalar(0)) keep = opts.flip ? (u < p) : (u > p);
      s.masks(i, j) = keep;
    }
  }
  s.purity = std::move(purity);
  return s;
}

template <typename Scalar>
Vector<Scalar> masked_sum(const RowMatrix<Scalar>& rows, const BoolArray& masks) {
  Vector<Scalar> acc = Vector<Scalar>::Zero(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    acc += (rows.row(i).array() * masks.row(i).template cast<Scalar>()).matrix().transpose();
  return acc;
}

}  // namespace detail

/// GradDrop on the rows as given.
template <typename Scalar>
AggregateUpdate<Scalar> graddrop(const GradientSet<Scalar>& gs, Rng& rng,
                                 const GradDropOptions& opts = {}) {
  auto sample = detail::draw_graddrop<Scalar>(gs.rows(), sign_purity<Scalar>(gs.rows()), opts, rng);
  AggregateUpdate<Scalar> out;
  out.direction = -detail::masked_sum<Scalar>(gs.rows(), sample.masks);
  out.weight_kind = WeightKind::None;
  out.trace = std::move(sample);
  return out;
}

/// Result of masking representation gradients. masked_sum = sum_i grad_z L_i (.) mask_i
/// is the cotangent to push back through the trunk; the trunk direction is its negation.
template <typename Scalar>
struct MaskedRepresentation {
  Vector<Scalar> masked_sum;
  AggregateTrace<Scalar> trace;
};

/// GradDrop on representation gradients. Rows are flattened batch x width
/// (sample-major); purity is computed per representation unit on
/// sum_over_batch(sign(z) (.) grad_z L_i), with sign(0) taken as +1, and
/// broadcast over the batch for masking.
template <typename Scalar>
MaskedRepresentation<Scalar> graddrop_repr(const GradientSet<Scalar>& repr, const Vector<Scalar>& z,
                                           Eigen::Index width, Rng& rng,
                                           const GradDropOptions& opts = {}) {
  if (z.size() != repr.dim()) throw DimensionError("graddrop_repr: z length differs from gradients");
  if (width < 1 || repr.dim() % width != 0) throw DimensionError("graddrop_repr: bad representation width");
  const Eigen::Index m = repr.task_count();
  const Eigen::Index batch = repr.dim() / width;
  RowMatrix<Scalar> signed_sums = RowMatrix<Scalar>::Zero(m, width);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index n = 0; n < batch; ++n)
      for (Eigen::Index k = 0; k < width; ++k) {
        const Eigen::Index j = n * width + k;
        const Scalar sign = z(j) < Scalar(0) ? Scalar(-1) : Scalar(1);
        signed_sums(i, k) += sign * repr.rows()(i, j);
      }
  auto sample = detail::draw_graddrop<Scalar>(repr.rows(), sign_purity<Scalar>(signed_sums), opts, rng);
  MaskedRepresentation<Scalar> out;
  out.masked_sum = detail::masked_sum<Scalar>(repr.rows(), sample.masks);
  out.trace = std::move(sample);
  return out;
}

/// Same, with the whole row treated as a single sample.
template <typename Scalar>
MaskedRepresentation<Scalar> graddrop_repr(const GradientSet<Scalar>& repr, const Vector<Scalar>& z,
                                           Rng& rng, const GradDropOptions& opts = {}) {
  return graddrop_repr(repr, z, repr.dim(), rng, opts);
}

/// Masks every entry of every representation gradient with an independent
/// Bernoulli(p) keep flag, ignoring signs.
template <typename Scalar>
MaskedRepresentation<Scalar> sign_agnostic_graddrop(const GradientSet<Scalar>& repr, double p, Rng& rng) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("sign_agnostic_graddrop: p must lie in (0, 1]");
  BernoulliSample s;
  s.keep.resize(repr.task_count(), repr.dim());
  for (Eigen::Index i = 0; i < repr.task_count(); ++i)
    for (Eigen::Index j = 0; j < repr.dim(); ++j) s.keep(i, j) = bernoulli(rng, p);
  MaskedRepresentation<Scalar> out;
  out.masked_sum = detail::masked_sum<Scalar>(repr.rows(), s.keep);
  out.trace = std::move(s);
  return out;
}

/// Constant is the deterministic control: every weight 1, total mass m.
enum class RlwDistribution { Dirichlet, Normal, Constant };

/// Weights for random loss weighting. Dirichlet(1) is sampled as normalized
/// Exp(1) draws; Normal draws go through a softmax.
template <typename Scalar>
Vector<Scalar> sample_rlw_weights(Eigen::Index m, RlwDistribution dist, Rng& rng) {
  Vector<Scalar> w(m);
  if (dist == RlwDistribution::Constant) return Vector<Scalar>::Ones(m);
  if (dist == RlwDistribution::Dirichlet) {
    for (Eigen::Index i = 0; i < m; ++i) w(i) = Scalar(standard_exponential(rng));
    w /= w.sum();
  } else {
    for (Eigen::Index i = 0; i < m; ++i) w(i) = Scalar(standard_normal(rng));
    w = (w.array() - w.maxCoeff()).exp().matrix();
    w /= w.sum();
  }
  return w;
}

template <typename Scalar>
AggregateUpdate<Scalar> rlw(const GradientSet<Scalar>& gs, RlwDistribution dist, Rng& rng) {
  if (dist == RlwDistribution::Constant) return unitary(gs);
  AggregateUpdate<Scalar> out;
  Vector<Scalar> w = sample_rlw_weights<Scalar>(gs.task_count(), dist, rng);
  out.direction = combine(gs, w);
  out.weight_kind = WeightKind::Simplex;
  out.weights = std::move(w);
  return out;
}

/// Random GradDrop: each task loss kept with probability p, g = -sum_i u_i grad_i.
template <typename Scalar>
AggregateUpdate<Scalar> rgd(const GradientSet<Scalar>& gs, double p, Rng& rng) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("rgd: p must lie in (0, 1]");
  const Eigen::Index m = gs.task_count();
  BernoulliSample s;
  s.keep.resize(m, 1);
  Vector<Scalar> u(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    s.keep(i, 0) = bernoulli(rng, p);
    u(i) = s.keep(i, 0) ? Scalar(1) : Scalar(0);
  }
  AggregateUpdate<Scalar> out;
  out.direction = -detail::masked_sum<Scalar>(gs.rows(), s.keep.replicate(1, gs.dim()));
  out.weight_kind = WeightKind::Bernoulli;
  out.weights = std::move(u);
  out.trace = std::move(s);
  return out;
}

}  // namespace mtopt
