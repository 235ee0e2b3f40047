#include <gtest/gtest.h>

#include <cmath>

#include "mtopt/grad_core.hpp"
#include "mtopt/random.hpp"
#include "oracles.hpp"

using namespace mtopt;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

RowMatrix<double> rows2(std::initializer_list<std::pair<double, double>> r) {
  RowMatrix<double> m(static_cast<Eigen::Index>(r.size()), 2);
  Eigen::Index i = 0;
  for (auto [a, b] : r) m.row(i++) << a, b;
  return m;
}

}  // namespace

TEST(Dot, Examples) {
  EXPECT_EQ(dot(Vector2d(1, 0), Vector2d(0, 1)), 0.0);
  EXPECT_EQ(dot(Vector2d(1, 2), Vector2d(3, -1)), 1.0);
  EXPECT_EQ(dot(Vector2d(3, 4), Vector2d(3, 4)), 25.0);
}

TEST(Dot, LengthMismatchThrows) {
  EXPECT_THROW(dot(VectorXd::Ones(2), VectorXd::Ones(3)), DimensionError);
}

TEST(Norm2, Examples) {
  EXPECT_EQ(norm2(Vector2d(3, 4)), 5.0);
  EXPECT_EQ(norm2(Vector2d(0, 0)), 0.0);
  EXPECT_EQ(norm2(Eigen::Vector4d(1, 1, 1, 1)), 2.0);
}

TEST(Cosine, Examples) {
  EXPECT_EQ(cosine(Vector2d(1, 0), Vector2d(-1, 0)), -1.0);
  EXPECT_EQ(cosine(Vector2d(1, 0), Vector2d(0, 1)), 0.0);
  EXPECT_NEAR(cosine(Vector2d(1, 0), Vector2d(1, 1)), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Cosine, ZeroInputIsDegenerate) {
  EXPECT_THROW(cosine(Vector2d(0, 0), Vector2d(1, 0)), DegenerateInputError);
}

TEST(Cosine, AlwaysWithinUnitInterval) {
  Rng rng = make_stream(11, 0);
  for (int k = 0; k < 10000; ++k) {
    const auto r = oracle::random_rows(rng, 2, 1 + static_cast<Eigen::Index>(k % 5));
    // Parallel pairs are where rounding pushes past +-1.
    const VectorXd a = r.row(0).transpose();
    const VectorXd b = (k % 3 == 0) ? VectorXd(a * 3.7) : VectorXd(r.row(1).transpose());
    const double c = cosine(a, b);
    ASSERT_GE(c, -1.0);
    ASSERT_LE(c, 1.0);
  }
}

TEST(Combine, Examples) {
  GradientSet<double> a(rows2({{1, 0}, {0, 1}}));
  EXPECT_EQ(combine(a, VectorXd(Vector2d(1, 1))), VectorXd(Vector2d(-1, -1)));
  GradientSet<double> b(rows2({{1, 0}, {-1, 0}}));
  EXPECT_EQ(combine(b, VectorXd(Vector2d(0.5, 0.5))), VectorXd(Vector2d(0, 0)));
  GradientSet<double> c(rows2({{2, 0}, {0, 1}}));
  const VectorXd g = combine(c, VectorXd(Vector2d(1.0 / 3, 2.0 / 3)));
  EXPECT_NEAR(g(0), -2.0 / 3, 1e-15);
  EXPECT_NEAR(g(1), -2.0 / 3, 1e-15);
}

TEST(Combine, WrongWeightCountThrows) {
  GradientSet<double> a(rows2({{1, 0}, {0, 1}}));
  EXPECT_THROW(combine(a, VectorXd(VectorXd::Ones(3))), DimensionError);
}

TEST(Combine, LinearInWeights) {
  Rng rng = make_stream(12, 0);
  for (int k = 0; k < 200; ++k) {
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(uniform_index(rng, 5));
    GradientSet<double> gs(oracle::random_rows(rng, m, 4));
    VectorXd w1(m), w2(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      w1(i) = standard_normal(rng);
      w2(i) = standard_normal(rng);
    }
    const double a = standard_normal(rng), b = standard_normal(rng);
    const VectorXd lhs = combine(gs, VectorXd(a * w1 + b * w2));
    const VectorXd rhs = a * combine(gs, w1) + b * combine(gs, w2);
    ASSERT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GradientSet, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(GradientSet<double>(RowMatrix<double>(0, 2)), DimensionError);
  EXPECT_THROW(GradientSet<double>(RowMatrix<double>(2, 0)), DimensionError);
  RowMatrix<double> bad = RowMatrix<double>::Zero(2, 2);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(GradientSet<double>{bad}, ValidationError);
}

TEST(GradientSet, RaggedRowsThrow) {
  EXPECT_THROW(GradientSet<double>::from_rows({VectorXd::Ones(2), VectorXd::Ones(3)}), DimensionError);
}

TEST(GradientSet, GramMatchesDots) {
  GradientSet<double> gs(rows2({{1, 2}, {3, -1}}));
  const auto g = gs.gram();
  EXPECT_EQ(g(0, 0), 5.0);
  EXPECT_EQ(g(0, 1), 1.0);
  EXPECT_EQ(g(1, 1), 10.0);
}

TEST(SimplexWeights, Validation) {
  EXPECT_THROW(SimplexWeights<double>(VectorXd(Vector2d(0.7, 0.7))), ValidationError);
  EXPECT_THROW(SimplexWeights<double>(VectorXd(Vector2d(1.5, -0.5))), ValidationError);
  EXPECT_THROW(SimplexWeights<double>::normalized(VectorXd(Vector2d(-1, 0))), ValidationError);
  const auto w = SimplexWeights<double>::normalized(VectorXd(Vector2d(1, 3)));
  EXPECT_DOUBLE_EQ(w[0], 0.25);
  EXPECT_DOUBLE_EQ(w[1], 0.75);
}

TEST(Streams, SameSeedAndStreamRepeat) {
  Rng a = make_stream(5, 2), b = make_stream(5, 2), c = make_stream(5, 3);
  const auto x = a(), y = b(), z = c();
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
}

TEST(Streams, UniformIndexStaysInRange) {
  Rng rng = make_stream(1, 1);
  for (int k = 0; k < 1000; ++k) ASSERT_LT(uniform_index(rng, 7), 7u);
}
