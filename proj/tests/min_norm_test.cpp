#include <gtest/gtest.h>

#include <cmath>

#include "mtopt/min_norm.hpp"
#include "oracles.hpp"

using namespace mtopt;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

GradientSet<double> set2(std::initializer_list<std::pair<double, double>> r) {
  RowMatrix<double> m(static_cast<Eigen::Index>(r.size()), 2);
  Eigen::Index i = 0;
  for (auto [a, b] : r) m.row(i++) << a, b;
  return GradientSet<double>(m);
}

}  // namespace

TEST(TwoTaskMinNorm, Examples) {
  auto a = two_task_min_norm<double>(Vector2d(1, 0), Vector2d(0, 1));
  EXPECT_DOUBLE_EQ(a.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(a.norm, std::sqrt(2.0) / 2);

  auto b = two_task_min_norm<double>(Vector2d(1, 0), Vector2d(-1, 0));
  EXPECT_EQ(b.norm, 0.0);

  auto c = two_task_min_norm<double>(Vector2d(2, 0), Vector2d(0, 1));
  EXPECT_NEAR(c.weights[1], 0.8, 1e-15);
  EXPECT_NEAR(c.point(0), 0.4, 1e-15);
  EXPECT_NEAR(c.point(1), 0.8, 1e-15);
  EXPECT_NEAR(c.norm, std::sqrt(20.0) / 5, 1e-15);
}

TEST(TwoTaskMinNorm, AgreesWithFineGrid) {
  // Grid over alpha in [0, 1] with step 1e-5.
  RowMatrix<double> r(2, 2);
  r << 2, 0, 0, 1;
  EXPECT_NEAR(two_task_min_norm<double>(Vector2d(2, 0), Vector2d(0, 1)).norm, oracle::grid_min_norm(r, 1e-5),
              1e-9);
}

TEST(TwoTaskMinNorm, LengthMismatchThrows) {
  EXPECT_THROW(two_task_min_norm<double>(VectorXd::Ones(2), VectorXd::Ones(3)), DimensionError);
}

TEST(MinNormPoint, SingleTask) {
  auto s = min_norm_point(set2({{3, 4}}));
  EXPECT_EQ(s.weights[0], 1.0);
  EXPECT_EQ(s.norm, 5.0);
}

TEST(MinNormPoint, ZeroInsideTriangle) {
  auto gs = set2({{1, 0}, {-1, 1}, {-1, -1}});
  auto s = min_norm_point(gs);
  EXPECT_LE(s.norm, 1e-9);
  EXPECT_NEAR(s.weights[0], 0.5, 1e-6);
  EXPECT_NEAR(s.weights[1], 0.25, 1e-6);
  EXPECT_NEAR(s.weights[2], 0.25, 1e-6);
  EXPECT_LE(oracle::grid_min_norm(gs.rows(), 1e-3), 1e-3);
}

TEST(MinNormPoint, TwoOrthogonalRows) {
  EXPECT_NEAR(min_norm_point(set2({{1, 0}, {0, 1}})).norm, std::sqrt(2.0) / 2, 1e-12);
}

TEST(MinNormPoint, RejectsBadConfig) {
  auto gs = set2({{1, 0}, {0, 1}});
  EXPECT_THROW(min_norm_point(gs, MinNormConfig{0, 1e-8}), ValidationError);
  EXPECT_THROW(min_norm_point(gs, MinNormConfig{10, 0.0}), ValidationError);
}

TEST(MinNormPoint, MatchesSimplexGrid) {
  Rng rng = make_stream(21, 0);
  for (int c = 0; c < 100; ++c) {
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(uniform_index(rng, 3));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(uniform_index(rng, 4));
    const auto r = oracle::ball_rows(rng, m, d, 0.5);
    ASSERT_NEAR(min_norm_point(GradientSet<double>(r)).norm, oracle::grid_min_norm(r, 1e-3), 1e-3) << r;
  }
}

TEST(MinNormPoint, MatchesFaceEnumeration) {
  Rng rng = make_stream(22, 0);
  for (int c = 0; c < 500; ++c) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(uniform_index(rng, 5));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(uniform_index(rng, 6));
    const auto r = oracle::random_rows(rng, m, d);
    ASSERT_NEAR(min_norm_point(GradientSet<double>(r)).norm, oracle::face_min_norm(r), 1e-9) << r;
  }
}

TEST(MinNormPoint, ObjectiveTraceNeverIncreases) {
  Rng rng = make_stream(23, 0);
  for (int c = 0; c < 300; ++c) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(uniform_index(rng, 6));
    const auto r = oracle::random_rows(rng, m, 1 + static_cast<Eigen::Index>(uniform_index(rng, 8)));
    const auto s = min_norm_point(GradientSet<double>(r));
    for (std::size_t k = 1; k < s.objective_trace.size(); ++k)
      ASSERT_LE(s.objective_trace[k], s.objective_trace[k - 1]);
  }
}

TEST(MinNormPoint, WeightsOnSimplexAndPointConsistent) {
  Rng rng = make_stream(24, 0);
  for (int c = 0; c < 200; ++c) {
    const auto r = oracle::random_rows(rng, 4, 3);
    const auto s = min_norm_point(GradientSet<double>(r));
    ASSERT_NEAR(s.weights.values().sum(), 1.0, 1e-12);
    ASSERT_GE(s.weights.values().minCoeff(), 0.0);
    ASSERT_LE((s.point - r.transpose() * s.weights.values()).norm(), 1e-12);
  }
}

TEST(MinNormPoint, WeightsInvariantToUniformScaling) {
  Rng rng = make_stream(25, 0);
  for (int c = 0; c < 100; ++c) {
    const auto r = oracle::random_rows(rng, 3, 5);
    const auto a = min_norm_point(GradientSet<double>(r));
    const auto b = min_norm_point(GradientSet<double>(r * 7.5));
    ASSERT_LE((a.weights.values() - b.weights.values()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(AffineMinNorm, Examples) {
  auto a = affine_min_norm(set2({{1, 0}, {0, 1}}));
  EXPECT_NEAR(a.weights(0), 0.5, 1e-12);
  EXPECT_NEAR(a.point(0), 0.5, 1e-12);
  EXPECT_NEAR(a.point(1), 0.5, 1e-12);

  auto b = affine_min_norm(set2({{1, 0}, {-1, 0}}));
  EXPECT_LE(b.point.norm(), 1e-12);

  auto c = affine_min_norm(set2({{1, 0}, {1, 0}}));
  EXPECT_NEAR(c.point(0), 1.0, 1e-12);
  EXPECT_NEAR(c.point(1), 0.0, 1e-12);
  EXPECT_NEAR(c.weights(0), 0.5, 1e-9);
  EXPECT_NEAR(c.weights(1), 0.5, 1e-9);
}

TEST(AffineMinNorm, OrthogonalToEveryDifference) {
  Rng rng = make_stream(26, 0);
  for (int c = 0; c < 300; ++c) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(uniform_index(rng, 4));
    const Eigen::Index d = m + static_cast<Eigen::Index>(uniform_index(rng, 4));
    const auto r = oracle::random_rows(rng, m, d);
    const auto a = affine_min_norm(GradientSet<double>(r));
    ASSERT_NEAR(a.weights.sum(), 1.0, 1e-10);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) ASSERT_LE(std::abs(a.point.dot(r.row(i) - r.row(j))), 1e-8);
    ASSERT_LE((a.point - oracle::affine_projection(r)).norm(), 1e-8);
  }
}

TEST(AffineMinNorm, NeverAboveConvexMinNorm) {
  Rng rng = make_stream(27, 0);
  for (int c = 0; c < 300; ++c) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(uniform_index(rng, 5));
    const auto r = oracle::random_rows(rng, m, 1 + static_cast<Eigen::Index>(uniform_index(rng, 6)));
    const GradientSet<double> gs(r);
    ASSERT_LE(affine_min_norm(gs).point.norm(), min_norm_point(gs).norm + 1e-12);
  }
}
