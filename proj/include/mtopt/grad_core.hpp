#pragma once

// Dense primitives and the gradient-set data model shared by every aggregator.
//
// Descent convention: every aggregator returns a direction g and the caller
// applies theta <- theta + lr * g. For a weighted combination that means
// g = -sum_i w_i * grad_i.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mtopt/errors.hpp"

namespace mtopt {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Row-major storage keeps each task gradient contiguous.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Which space the gradient rows live in: shared parameters or the shared representation z.
enum class Space { Parameter, Representation };

inline const char* to_string(Space s) {
  return s == Space::Parameter ? "parameter" : "representation";
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

template <typename A, typename B>
typename A::Scalar dot(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  return a.derived().reshaped().dot(b.derived().reshaped());
}

template <typename A>
typename A::Scalar norm2(const Eigen::MatrixBase<A>& a) {
  return a.norm();
}

/// Cosine similarity, clamped to [-1, 1].
template <typename A, typename B>
typename A::Scalar cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename A::Scalar;
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0)) {
    throw DegenerateInputError("cosine: zero-norm input");
  }
  const Scalar c = dot(a, b) / (na * nb);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

/// m per-task gradients in a common d-dimensional space, stored one task per row.
template <typename Scalar>
class GradientSet {
 public:
  using VectorType = Vector<Scalar>;
  using MatrixType = RowMatrix<Scalar>;

  GradientSet(MatrixType rows, Space space = Space::Parameter)
      : rows_(std::move(rows)), space_(space) {
    if (rows_.rows() < 1 || rows_.cols() < 1) {
      throw DimensionError("GradientSet: need at least one task and one dimension");
    }
    if (!all_finite(rows_)) {
      throw ValidationError("GradientSet: non-finite gradient entry");
    }
  }

  static GradientSet from_rows(const std::vector<VectorType>& rows,
                               Space space = Space::Parameter) {
    if (rows.empty()) throw DimensionError("GradientSet: no rows");
    MatrixType m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols()) throw DimensionError("GradientSet: ragged rows");
      m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    return GradientSet(std::move(m), space);
  }

  Eigen::Index task_count() const { return rows_.rows(); }
  Eigen::Index dim() const { return rows_.cols(); }
  Space space() const { return space_; }

  const MatrixType& rows() const { return rows_; }
  VectorType row(Eigen::Index i) const { return rows_.row(i).transpose(); }

  /// m x m matrix of pairwise dot products.
  Matrix<Scalar> gram() const { return rows_ * rows_.transpose(); }

  VectorType row_norms() const { return rows_.rowwise().norm(); }

  GradientSet scaled(Scalar c) const { return GradientSet(rows_ * c, space_); }

  GradientSet with_rows_scaled(const VectorType& factors) const {
    if (factors.size() != task_count()) throw DimensionError("with_rows_scaled: length mismatch");
    return GradientSet(factors.asDiagonal() * rows_, space_);
  }

 private:
  MatrixType rows_;
  Space space_;
};

/// -sum_i rows_i accumulated task by task. Shared by every path that must
/// reproduce unitary scalarization bit for bit.
template <typename Scalar>
Vector<Scalar> negated_sum(const RowMatrix<Scalar>& rows) {
  Vector<Scalar> acc = Vector<Scalar>::Zero(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) acc += rows.row(i).transpose();
  return -acc;
}

/// Returns -sum_i w_i rows_i.
template <typename Scalar>
Vector<Scalar> combine(const GradientSet<Scalar>& gs, const Vector<Scalar>& w) {
  if (w.size() != gs.task_count()) {
    throw DimensionError("combine: " + std::to_string(w.size()) + " weights for " +
                         std::to_string(gs.task_count()) + " tasks");
  }
  return -(gs.rows().transpose() * w);
}

/// Nonnegative task weights summing to one.
template <typename Scalar>
class SimplexWeights {
 public:
  static constexpr double kSumTolerance = 1e-12;

  explicit SimplexWeights(Vector<Scalar> alpha) : alpha_(std::move(alpha)) {
    if (alpha_.size() < 1) throw DimensionError("SimplexWeights: empty");
    if (!all_finite(alpha_) || (alpha_.array() < Scalar(0)).any()) {
      throw ValidationError("SimplexWeights: negative or non-finite weight");
    }
    if (std::abs(alpha_.sum() - Scalar(1)) > Scalar(kSumTolerance)) {
      throw ValidationError("SimplexWeights: weights do not sum to 1");
    }
  }

  /// Clips tiny negatives from rounding and renormalizes.
  static SimplexWeights normalized(Vector<Scalar> raw) {
    raw = raw.cwiseMax(Scalar(0));
    const Scalar total = raw.sum();
    if (!(total > Scalar(0))) throw ValidationError("SimplexWeights: no positive mass");
    raw /= total;
    // One more pass so the sum is exact to rounding of the last entry.
    const Scalar rest = raw.sum() - raw(raw.size() - 1);
    raw(raw.size() - 1) = std::max(Scalar(0), Scalar(1) - rest);
    return SimplexWeights(std::move(raw));
  }

  static SimplexWeights uniform(Eigen::Index m) {
    return SimplexWeights::normalized(Vector<Scalar>::Constant(m, Scalar(1)));
  }

  const Vector<Scalar>& values() const { return alpha_; }
  Scalar operator[](Eigen::Index i) const { return alpha_(i); }
  Eigen::Index size() const { return alpha_.size(); }

 private:
  Vector<Scalar> alpha_;
};

/// PCGrad bookkeeping. coeffs(j, i) is how much of rows_i was added to task j's
/// projected gradient; the diagonal is 1 so -g = sum_i (sum_j coeffs(j, i)) rows_i.
template <typename Scalar>
struct PCGradTrace {
  Matrix<Scalar> coeffs;
  std::vector<std::vector<Eigen::Index>> orders;
};

/// One GradDrop draw: sign purity per coordinate, the uniforms and the resulting keep-masks.
template <typename Scalar>
struct GradDropSample {
  Vector<Scalar> purity;
  RowMatrix<Scalar> uniforms;
  BoolArray masks;
};

/// Per-task Bernoulli keep flags (RGD) or per-entry flags (sign-agnostic masking).
struct BernoulliSample {
  BoolArray keep;
};

template <typename Scalar>
using AggregateTrace =
    std::variant<std::monostate, PCGradTrace<Scalar>, GradDropSample<Scalar>, BernoulliSample>;

enum class WeightKind { None, Unitary, Simplex, Affine, Bernoulli };

template <typename Scalar>
struct AggregateUpdate {
  Vector<Scalar> direction;
  WeightKind weight_kind = WeightKind::None;
  std::optional<Vector<Scalar>> weights;
  AggregateTrace<Scalar> trace;
  /// Set when a solver hit a rank-deficient system and used its documented fallback.
  bool used_fallback = false;
};

}  // namespace mtopt
