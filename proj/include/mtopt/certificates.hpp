#pragma once

// Stationarity certificates and tragic-triad measurements on gradient sets.

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "mtopt/grad_core.hpp"
#include "mtopt/min_norm.hpp"

namespace mtopt {

inline constexpr double kDefaultCertificateTolerance = 1e-6;

template <typename Scalar>
struct StationarityReport {
  Scalar unitary_norm;  // || sum_i g_i ||
  Scalar convex_cert;   // min-norm over Conv{g_i}
  Scalar affine_cert;   // min-norm over Aff{g_i / ||g_i||}, zero rows excluded
  Scalar joint_cert;    // max_i ||g_i||
  Scalar tolerance;
  /// Tolerance at which the affine certificate is implied by the convex one:
  /// tau / min_i ||g_i|| over the nonzero rows.
  Scalar affine_tolerance;
  Eigen::Index excluded_zero_rows = 0;

  bool unitary_stationary() const { return unitary_norm <= tolerance; }
  bool pareto_stationary() const { return convex_cert <= tolerance; }
  bool affine_stationary() const { return affine_cert <= tolerance; }
  bool joint_minimum() const { return joint_cert <= tolerance; }
};

/// Unit rows of the nonzero gradients, or nothing when every row is zero.
template <typename Scalar>
std::optional<GradientSet<Scalar>> normalized_nonzero_rows(const GradientSet<Scalar>& gs) {
  const Vector<Scalar> norms = gs.row_norms();
  std::vector<Vector<Scalar>> units;
  for (Eigen::Index i = 0; i < gs.task_count(); ++i)
    if (norms(i) > Scalar(0)) units.push_back(gs.row(i) / norms(i));
  if (units.empty()) return std::nullopt;
  return GradientSet<Scalar>::from_rows(units, gs.space());
}

template <typename Scalar>
StationarityReport<Scalar> stationarity_report(const GradientSet<Scalar>& gs,
                                               Scalar tolerance = Scalar(kDefaultCertificateTolerance),
                                               const MinNormConfig& qp = {}) {
  if (!(tolerance > Scalar(0))) throw ValidationError("stationarity_report: tolerance must be > 0");
  StationarityReport<Scalar> r{};
  r.tolerance = tolerance;
  r.unitary_norm = negated_sum<Scalar>(gs.rows()).norm();
  r.convex_cert = min_norm_point(gs, qp).norm;
  const Vector<Scalar> norms = gs.row_norms();
  r.joint_cert = norms.maxCoeff();

  Scalar min_live = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < gs.task_count(); ++i) {
    if (norms(i) > Scalar(0)) min_live = std::min(min_live, norms(i));
    else ++r.excluded_zero_rows;
  }
  if (auto units = normalized_nonzero_rows(gs)) {
    r.affine_cert = affine_min_norm(*units).point.norm();
    r.affine_tolerance = tolerance / min_live;
  } else {
    r.affine_cert = Scalar(0);
    r.affine_tolerance = tolerance;
  }
  return r;
}

template <typename Scalar>
struct TriadReport {
  Matrix<Scalar> cosines;  // pairwise, 0 where a row is zero
  Scalar magnitude_ratio;  // max_i ||g_i|| / min_j ||g_j||, infinite if some row is zero
  /// d^T (grad(theta + eps d) - grad(theta)) / eps along d = grad / ||grad|| of the summed
  /// loss. Absent when the summed gradient is zero.
  std::optional<Scalar> curvature;
};

/// Pairwise cosines and magnitude ratio of a gradient set.
template <typename Scalar>
TriadReport<Scalar> conflict_summary(const GradientSet<Scalar>& gs) {
  const Eigen::Index m = gs.task_count();
  const Vector<Scalar> norms = gs.row_norms();
  TriadReport<Scalar> r;
  r.cosines = Matrix<Scalar>::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (norms(i) > Scalar(0) && norms(j) > Scalar(0))
        r.cosines(i, j) = cosine(gs.rows().row(i), gs.rows().row(j));
  const Scalar lo = norms.minCoeff();
  const Scalar hi = norms.maxCoeff();
  if (hi == Scalar(0)) r.magnitude_ratio = Scalar(1);
  else if (lo == Scalar(0)) r.magnitude_ratio = std::numeric_limits<Scalar>::infinity();
  else r.magnitude_ratio = hi / lo;
  return r;
}

/// Per-task gradients of the shared parameters as a function of those parameters.
template <typename Scalar>
using PerTaskGradientFn = std::function<GradientSet<Scalar>(const Vector<Scalar>&)>;

/// Triad measurements at theta. Uses two evaluations of the per-task gradients.
template <typename Scalar>
TriadReport<Scalar> triad_report(const PerTaskGradientFn<Scalar>& grads, const Vector<Scalar>& theta,
                                 Scalar eps) {
  if (!(eps > Scalar(0))) throw ValidationError("triad_report: eps must be > 0");
  const GradientSet<Scalar> gs = grads(theta);
  TriadReport<Scalar> r = conflict_summary(gs);
  const Vector<Scalar> total = -negated_sum<Scalar>(gs.rows());
  const Scalar n = total.norm();
  if (n > Scalar(0)) {
    const Vector<Scalar> dir = total / n;
    const Vector<Scalar> shifted = -negated_sum<Scalar>(grads(theta + eps * dir).rows());
    r.curvature = dir.dot(shifted - total) / eps;
  }
  return r;
}

}  // namespace mtopt
