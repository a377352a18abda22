#include "semired/loss.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace semired;
using semired::testing::fd_gradient;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(LossValue, LeastSquaresZeroAtData) {
  const Vector b = vec({1.0, -2.0, 3.5});
  EXPECT_DOUBLE_EQ(LossModel::least_squares(b).value(b), 0.0);
}

TEST(LossValue, LeastSquaresHalfSquaredNorm) {
  const Vector b = vec({1.0, 2.0});
  EXPECT_DOUBLE_EQ(LossModel::least_squares(b).value(vec({2.0, 0.0})), 0.5 * (1.0 + 4.0));
}

TEST(LossValue, HuberAtThreshold) {
  const LossModel h = LossModel::huber(vec({0.0}), 0.3);
  EXPECT_NEAR(h.value(vec({0.3})), 0.045, 1e-15);
}

TEST(LossValue, HuberLinearTail) {
  const LossModel h = LossModel::huber(vec({1.0}), 0.3);
  // |x| = 2 > t: t (|x| - t / 2)
  EXPECT_NEAR(h.value(vec({-1.0})), 0.3 * (2.0 - 0.15), 1e-15);
}

TEST(LossValue, PoissonDropsConstant) {
  const LossModel p = LossModel::poisson(vec({2.0}));
  EXPECT_NEAR(p.value(vec({2.0})), 2.0 - 2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(p.value(vec({2.0})), 0.61371, 1e-5);
  EXPECT_NEAR(p.curvature(vec({2.0})).grad[0], 0.0, 1e-15);
}

TEST(LossValue, PoissonZeroCountIsLinear) {
  const LossModel p = LossModel::poisson(vec({0.0}));
  EXPECT_DOUBLE_EQ(p.value(vec({3.0})), 3.0);
  const CurvatureBundle cb = p.curvature(vec({3.0}));
  EXPECT_DOUBLE_EQ(cb.grad[0], 1.0);
  EXPECT_DOUBLE_EQ(cb.curv[0], 0.0);
  EXPECT_DOUBLE_EQ(cb.w[0], 0.0);
  EXPECT_DOUBLE_EQ(cb.r[0], 0.0);
}

TEST(LossValue, PoissonDomainError) {
  const LossModel p = LossModel::poisson(vec({1.0, 2.0}));
  EXPECT_THROW(p.value(vec({1.0, 0.0})), DomainError);
  EXPECT_THROW(p.value(vec({1.0, -1.0})), DomainError);
  EXPECT_THROW(p.curvature(vec({-1.0, 1.0})), DomainError);
  try {
    p.value(vec({1.0, 0.0}));
  } catch (const DomainError& e) {
    EXPECT_EQ(e.index(), 1);
  }
}

TEST(LossValue, SizeMismatchThrows) {
  EXPECT_THROW(LossModel::least_squares(vec({1.0})).value(vec({1.0, 2.0})), ConfigError);
}

TEST(Curvature, LeastSquares) {
  const Vector b = vec({1.0, 2.0, 3.0});
  const Vector mu = vec({0.5, 4.0, -1.0});
  const CurvatureBundle cb = LossModel::least_squares(b).curvature(mu);
  EXPECT_TRUE(cb.curv.isApprox(Vector::Ones(3)));
  EXPECT_TRUE(cb.w.isApprox(Vector::Ones(3)));
  EXPECT_TRUE(cb.r.isApprox(mu - b));
}

TEST(Curvature, PoissonExample) {
  const LossModel p = LossModel::poisson(vec({4.0}));
  const CurvatureBundle cb = p.curvature(vec({2.0}));
  EXPECT_DOUBLE_EQ(cb.grad[0], -1.0);
  EXPECT_DOUBLE_EQ(cb.curv[0], 1.0);
  EXPECT_DOUBLE_EQ(cb.w[0], 1.0);
  EXPECT_DOUBLE_EQ(cb.r[0], -1.0);
  const Vector fd = fd_gradient([&](const Vector& m) { return p.value(m); }, vec({2.0}));
  EXPECT_NEAR(fd[0], -1.0, 1e-8);
}

TEST(Curvature, HuberTail) {
  const LossModel h = LossModel::huber(vec({0.0}), 0.3);
  const CurvatureBundle cb = h.curvature(vec({1.0}));
  EXPECT_DOUBLE_EQ(cb.grad[0], 0.3);
  EXPECT_DOUBLE_EQ(cb.curv[0], 0.0);
  EXPECT_DOUBLE_EQ(cb.r[0], 0.0);
}

TEST(Curvature, WeightedLeastSquares) {
  const Vector b = vec({4.0, 0.0, 100.0});
  const LossModel l = LossModel::weighted_least_squares(b, 1.0);
  const Vector mu = vec({5.0, 1.0, 90.0});
  const CurvatureBundle cb = l.curvature(mu);
  const Vector om = vec({0.5, 1.0, 0.1});
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(cb.curv[i], om[i] * om[i], 1e-15);
    EXPECT_NEAR(cb.grad[i], om[i] * om[i] * (mu[i] - b[i]), 1e-13);
  }
}

TEST(Curvature, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  const Index n = 7;
  const Vector b = semired::testing::random_uniform(rng, n, 0.5, 6.0);
  const Vector mu = semired::testing::random_uniform(rng, n, 0.5, 6.0);
  for (const LossModel& l : {LossModel::least_squares(b), LossModel::weighted_least_squares(b),
                             LossModel::poisson(b), LossModel::huber(b, 0.3)}) {
    const Vector fd = fd_gradient([&](const Vector& m) { return l.value(m); }, mu);
    const CurvatureBundle cb = l.curvature(mu);
    EXPECT_LT((fd - cb.grad).norm() / cb.grad.norm(), 1e-7) << to_string(l.kind());
  }
}

TEST(Curvature, CurvatureMatchesDerivativeOfGradient) {
  Rng rng(4);
  const Index n = 5;
  const Vector b = semired::testing::random_uniform(rng, n, 0.5, 6.0);
  // Huber points kept away from the kinks.
  Vector mu = b;
  mu.head(2).array() += 0.1;
  mu.tail(3).array() += 2.0;
  for (const LossModel& l : {LossModel::weighted_least_squares(b), LossModel::poisson(b),
                             LossModel::huber(b, 0.3)}) {
    const double h = 1e-6;
    for (Index i = 0; i < n; ++i) {
      Vector mp = mu;
      Vector mm = mu;
      mp[i] += h;
      mm[i] -= h;
      const double d = (l.curvature(mp).grad[i] - l.curvature(mm).grad[i]) / (2 * h);
      EXPECT_NEAR(d, l.curvature(mu).curv[i], 1e-6 * std::max(1.0, std::abs(d)));
    }
  }
}

TEST(Curvature, BundleIdentities) {
  Rng rng(5);
  const Index n = 9;
  const Vector b = semired::testing::random_uniform(rng, n, 0.0, 4.0);
  const Vector mu = semired::testing::random_uniform(rng, n, 0.2, 8.0);
  for (const LossModel& l : {LossModel::poisson(b), LossModel::huber(b, 0.5)}) {
    const CurvatureBundle cb = l.curvature(mu);
    for (Index i = 0; i < n; ++i) {
      EXPECT_GE(cb.curv[i], 0.0);
      EXPECT_NEAR(cb.w[i] * cb.w[i], cb.curv[i], 1e-14);
      if (cb.w[i] > 0.0) EXPECT_NEAR(cb.w[i] * cb.r[i], cb.grad[i], 1e-12);
      else EXPECT_EQ(cb.r[i], 0.0);
    }
  }
}

TEST(Curvature, ConvexityAlongSegments) {
  Rng rng(6);
  const Index n = 6;
  const Vector b = semired::testing::random_uniform(rng, n, 0.5, 5.0);
  for (const LossModel& l : {LossModel::least_squares(b), LossModel::weighted_least_squares(b),
                             LossModel::poisson(b), LossModel::huber(b, 0.3)}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Vector u = semired::testing::random_uniform(rng, n, 0.1, 8.0);
      const Vector v = semired::testing::random_uniform(rng, n, 0.1, 8.0);
      const double s = rng.uniform();
      EXPECT_LE(l.value(s * u + (1 - s) * v), s * l.value(u) + (1 - s) * l.value(v) + 1e-12);
    }
  }
}

TEST(Weights, WeightedLeastSquaresExamples) {
  const Vector w = weighted_ls_weights(vec({4.0, 0.0, 100.0}), 1.0);
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
  EXPECT_DOUBLE_EQ(w[2], 0.1);
}

TEST(Weights, ComponentWeightsScaleValueAndDerivatives) {
  const Vector b = vec({0.0, 0.0});
  const Vector c = vec({0.25, 2.0});
  const LossModel l = LossModel::least_squares(b).with_component_weights(c);
  const Vector mu = vec({2.0, 1.0});
  EXPECT_DOUBLE_EQ(l.value(mu), 0.25 * 2.0 + 2.0 * 0.5);
  const CurvatureBundle cb = l.curvature(mu);
  EXPECT_DOUBLE_EQ(cb.grad[0], 0.5);
  EXPECT_DOUBLE_EQ(cb.curv[1], 2.0);
}

TEST(Names, LossKindToString) {
  EXPECT_EQ(to_string(LossKind::Poisson), "poisson");
  EXPECT_EQ(to_string(LossKind::Huber), "huber");
}
