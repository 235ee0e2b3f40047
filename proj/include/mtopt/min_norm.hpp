#pragma once

// Minimum-norm points of the convex and affine hulls of a gradient set.
//
// The convex-hull problem is the dual of the MGDA direction-finding problem:
//   min_alpha || sum_i alpha_i g_i ||^2   s.t.  alpha >= 0, sum_i alpha_i = 1.
// Everything runs on the m x m Gram matrix, so the cost is independent of d
// after the m^2 dot products.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mtopt/grad_core.hpp"

namespace mtopt {

struct MinNormConfig {
  int max_iter = 250;
  double tol = 1e-8;
};

template <typename Scalar>
struct MinNormSolution {
  SimplexWeights<Scalar> weights;
  Vector<Scalar> point;
  Scalar norm;
  int iterations = 0;
  /// ||point||^2 (Gram form) at the start and after every accepted step.
  std::vector<Scalar> objective_trace;
};

template <typename Scalar>
struct AffineMinNorm {
  Vector<Scalar> weights;  // sums to one, any sign
  Vector<Scalar> point;
};

namespace detail {

/// Weight on b of the min-norm point of segment [a, b], from the three dot products.
/// Ties (a == b) resolve to the midpoint.
template <typename Scalar>
Scalar segment_weight(Scalar aa, Scalar ab, Scalar bb) {
  const Scalar denom = aa - Scalar(2) * ab + bb;
  if (!(denom > Scalar(0))) return Scalar(0.5);
  return std::clamp((aa - ab) / denom, Scalar(0), Scalar(1));
}

/// Min ||G-weighted alpha|| subject to sum(alpha) = 1 through the KKT system
///   [G 1; 1^T 0] [alpha; mu] = [0; 1].
/// A complete orthogonal decomposition returns the minimum-norm solution when G is singular.
template <typename Scalar>
Vector<Scalar> affine_weights_from_gram(const Matrix<Scalar>& gram) {
  const Eigen::Index m = gram.rows();
  // The weights do not depend on the scale of the Gram matrix, but the rank
  // threshold does: normalize so the Gram block is comparable to the ones.
  const Scalar scale = gram.diagonal().cwiseAbs().maxCoeff();
  Matrix<Scalar> kkt = Matrix<Scalar>::Zero(m + 1, m + 1);
  kkt.topLeftCorner(m, m) = scale > Scalar(0) ? Matrix<Scalar>(gram / scale) : gram;
  kkt.block(0, m, m, 1).setOnes();
  kkt.block(m, 0, 1, m).setOnes();
  Vector<Scalar> rhs = Vector<Scalar>::Zero(m + 1);
  rhs(m) = Scalar(1);
  Eigen::CompleteOrthogonalDecomposition<Matrix<Scalar>> cod;
  cod.setThreshold(Scalar(1e-12));
  cod.compute(kkt);
  Vector<Scalar> sol = cod.solve(rhs);
  return sol.head(m);
}

}  // namespace detail

template <typename Scalar>
MinNormSolution<Scalar> two_task_min_norm(const Vector<Scalar>& g1, const Vector<Scalar>& g2) {
  if (g1.size() != g2.size()) throw DimensionError("two_task_min_norm: length mismatch");
  Scalar a2;
  if (g1 == g2) {
    a2 = Scalar(0.5);
  } else {
    const Vector<Scalar> diff = g1 - g2;
    a2 = std::clamp(diff.dot(g1) / diff.squaredNorm(), Scalar(0), Scalar(1));
  }
  Vector<Scalar> alpha(2);
  alpha << Scalar(1) - a2, a2;
  Vector<Scalar> point = alpha(0) * g1 + alpha(1) * g2;
  const Scalar n = point.norm();
  return {SimplexWeights<Scalar>(alpha), std::move(point), n, 1, {n * n}};
}

/// Min-norm element of the convex hull. Two rows use the closed form.
///
/// Pairwise Frank-Wolfe on the simplex runs first: each iteration moves mass
/// from the worst active vertex to the best vertex with an exact line search,
/// which keeps the objective monotone, and stops when the Frank-Wolfe gap drops
/// below tol. The iterate is then polished with Wolfe's active-set cycles: solve
/// the equality-constrained problem on the current corral, step back to the
/// simplex boundary when that solution has nonpositive weights, and add the
/// most violating vertex until the gap is at rounding level. The polish never
/// increases the objective and ends with an exact solution on its support.
template <typename Scalar>
MinNormSolution<Scalar> min_norm_point(const GradientSet<Scalar>& gs, const MinNormConfig& cfg = {}) {
  if (cfg.max_iter < 1) throw ValidationError("min_norm_point: max_iter must be >= 1");
  if (!(cfg.tol > 0)) throw ValidationError("min_norm_point: tol must be > 0");

  const Eigen::Index m = gs.task_count();
  const auto& rows = gs.rows();
  if (m == 1) {
    Vector<Scalar> point = rows.row(0).transpose();
    const Scalar n = point.norm();
    return {SimplexWeights<Scalar>::uniform(1), std::move(point), n, 0, {n * n}};
  }
  if (m == 2) {
    auto s = two_task_min_norm<Scalar>(rows.row(0).transpose(), rows.row(1).transpose());
    const Scalar start = (Scalar(0.5) * (rows.row(0) + rows.row(1))).squaredNorm();
    if (start > s.objective_trace.front()) s.objective_trace.insert(s.objective_trace.begin(), start);
    return s;
  }

  const Matrix<Scalar> gram = gs.gram();
  const Scalar tol = Scalar(cfg.tol);
  Vector<Scalar> alpha = Vector<Scalar>::Constant(m, Scalar(1) / Scalar(m));
  Vector<Scalar> ga = gram * alpha;
  Scalar obj = alpha.dot(ga);
  std::vector<Scalar> trace{obj};

  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    Eigen::Index t = 0;
    ga.minCoeff(&t);
    Eigen::Index s = -1;
    Scalar worst = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
      if (alpha(i) > Scalar(0) && ga(i) > worst) {
        worst = ga(i);
        s = i;
      }
    }
    const Scalar gap = obj - ga(t);
    if (gap <= tol || s == t) break;

    // Segment from the current point p to p + alpha_s (g_t - g_s).
    const Scalar mass = alpha(s);
    const Scalar pd = mass * (ga(t) - ga(s));
    const Scalar dd = mass * mass * (gram(t, t) + gram(s, s) - Scalar(2) * gram(t, s));
    const Scalar lambda = detail::segment_weight(obj, obj + pd, obj + Scalar(2) * pd + dd);
    if (!(lambda > Scalar(0))) break;
    const Scalar step = lambda * mass;

    Vector<Scalar> next = alpha;
    next(t) += step;
    next(s) = (lambda >= Scalar(1)) ? Scalar(0) : next(s) - step;
    Vector<Scalar> next_ga = gram * next;
    const Scalar next_obj = next.dot(next_ga);
    if (next_obj > obj) break;
    alpha = std::move(next);
    ga = std::move(next_ga);
    obj = next_obj;
    trace.push_back(obj);
  }

  // Wolfe polish. `corral` may hold vertices with zero weight that were just added.
  const Scalar scale = gram.diagonal().maxCoeff();
  const Scalar polish_tol = Scalar(1e-13) * scale;
  const Scalar slack = Scalar(64) * std::numeric_limits<Scalar>::epsilon() * scale;
  std::vector<bool> corral(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) corral[static_cast<std::size_t>(i)] = alpha(i) > Scalar(0);

  auto affine_on_corral = [&](std::vector<Eigen::Index>& idx) {
    idx.clear();
    for (Eigen::Index i = 0; i < m; ++i)
      if (corral[static_cast<std::size_t>(i)]) idx.push_back(i);
    const auto k = static_cast<Eigen::Index>(idx.size());
    Matrix<Scalar> sub(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = 0; b < k; ++b) sub(a, b) = gram(idx[a], idx[b]);
    return detail::affine_weights_from_gram(sub);
  };

  std::vector<Eigen::Index> idx;
  for (int major = 0; major < 4 * static_cast<int>(m) + 8; ++major) {
    Vector<Scalar> cand = alpha;
    bool ok = true;
    for (int minor = 0; minor <= static_cast<int>(m); ++minor) {
      const Vector<Scalar> beta = affine_on_corral(idx);
      if (!all_finite(beta)) {
        ok = false;
        break;
      }
      if (beta.minCoeff() > Scalar(0)) {
        cand.setZero();
        for (std::size_t a = 0; a < idx.size(); ++a) cand(idx[a]) = beta(static_cast<Eigen::Index>(a));
        break;
      }
      // Move toward beta until the first weight reaches zero and drop it.
      Scalar theta = Scalar(1);
      Eigen::Index drop = -1;
      for (std::size_t a = 0; a < idx.size(); ++a) {
        const Scalar w = cand(idx[a]);
        const Scalar b = beta(static_cast<Eigen::Index>(a));
        if (b <= Scalar(0) && w - b > Scalar(0) && w / (w - b) <= theta) {
          theta = w / (w - b);
          drop = idx[a];
        }
      }
      for (std::size_t a = 0; a < idx.size(); ++a) {
        const Scalar w = cand(idx[a]);
        cand(idx[a]) = std::max(Scalar(0), theta * beta(static_cast<Eigen::Index>(a)) + (Scalar(1) - theta) * w);
      }
      if (drop >= 0) cand(drop) = Scalar(0);
      for (std::size_t a = 0; a < idx.size(); ++a)
        if (cand(idx[a]) <= Scalar(0)) corral[static_cast<std::size_t>(idx[a])] = false;
      if (cand.sum() <= Scalar(0)) {
        ok = false;
        break;
      }
    }
    if (!ok) break;
    cand /= cand.sum();
    const Vector<Scalar> cand_ga = gram * cand;
    const Scalar cand_obj = cand.dot(cand_ga);
    // Near a zero minimum the quadratic form is dominated by rounding, so a
    // candidate within that slack is still taken; the trace only records decreases.
    if (cand_obj <= obj + slack) {
      alpha = cand;
      ga = cand_ga;
      obj = cand_obj;
      if (obj < trace.back()) trace.push_back(obj);
    }
    for (Eigen::Index i = 0; i < m; ++i) corral[static_cast<std::size_t>(i)] = alpha(i) > Scalar(0);

    Eigen::Index t = 0;
    ga.minCoeff(&t);
    if (obj - ga(t) <= polish_tol || corral[static_cast<std::size_t>(t)]) break;
    corral[static_cast<std::size_t>(t)] = true;
  }

  auto weights = SimplexWeights<Scalar>::normalized(alpha);
  Vector<Scalar> point = rows.transpose() * weights.values();
  const Scalar norm = point.norm();
  return {std::move(weights), std::move(point), norm, it, std::move(trace)};
}

/// Min-norm element of the affine hull: weights sum to one but may be negative.
template <typename Scalar>
AffineMinNorm<Scalar> affine_min_norm(const GradientSet<Scalar>& gs) {
  Vector<Scalar> w = detail::affine_weights_from_gram(gs.gram());
  Vector<Scalar> point = gs.rows().transpose() * w;
  return {std::move(w), std::move(point)};
}

}  // namespace mtopt
