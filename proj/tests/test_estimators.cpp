#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "dpreg/error.hpp"
#include "dpreg/estimators.hpp"
#include "dpreg/rng.hpp"
#include "oracles.hpp"

using namespace dpreg;

namespace {

// Scalar X, Z correlated through a shared uniform; y arbitrary.
Dataset scalar_design(Eigen::Index n, Rng& rng, double noise = 0.3) {
  Dataset d;
  d.x.resize(n, 1);
  d.z.resize(n, 1);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = uniform01(rng);
    d.z(i, 0) = z;
    d.x(i, 0) = 0.7 * z + 0.3 * uniform01(rng);
    d.y(i) = std::sin(3.0 * d.x(i, 0)) + noise * (uniform01(rng) - 0.5);
  }
  return d;
}

const SieveBasis kLine = SieveBasis::polynomial(1, 1);
const SieveBasis kCubic = SieveBasis::polynomial(1, 3);

}  // namespace

TEST(Stage1, IdenticalInstrumentsGiveIdentity) {
  Rng rng(1);
  Dataset d = scalar_design(40, rng);
  d.z = d.x;
  const auto op = rdiv_stage1(d, kCubic, kCubic, 0.0);
  EXPECT_LT((op.B - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Stage1, IndependentInstrumentsGiveNearZeroSlopes) {
  Rng rng(2);
  const Eigen::Index n = 20000;
  Dataset d;
  d.x.resize(n, 1);
  d.z.resize(n, 1);
  d.y = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.x(i, 0) = uniform01(rng);
    d.z(i, 0) = uniform01(rng);
  }
  const auto trig = SieveBasis::trigonometric(1, 3);
  const auto op = rdiv_stage1(d, trig, trig, 0.0);
  for (int j = 0; j < 3; ++j)
    for (int k = 1; k < 3; ++k) EXPECT_LT(std::abs(op.B(j, k)), 5.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Stage1, MatchesHandBuiltNormalEquations) {
  Dataset d;
  d.x = (Eigen::MatrixXd(6, 1) << 0.1, 0.4, 0.2, 0.9, 0.5, 0.7).finished();
  d.z = (Eigen::MatrixXd(6, 1) << 0.0, 0.3, 0.5, 0.8, 0.6, 1.0).finished();
  d.y = Eigen::VectorXd::Zero(6);
  double sz = 0, szz = 0, sx = 0, szx = 0;
  for (int i = 0; i < 6; ++i) {
    sz += d.z(i, 0);
    szz += d.z(i, 0) * d.z(i, 0);
    sx += d.x(i, 0);
    szx += d.z(i, 0) * d.x(i, 0);
  }
  // regress x on (1, z): slope and intercept by the 2x2 inverse
  const double det = 6 * szz - sz * sz;
  const double intercept = (szz * sx - sz * szx) / det;
  const double slope = (6 * szx - sz * sx) / det;
  const auto op = rdiv_stage1(d, kLine, kLine, 0.0);
  EXPECT_NEAR(op.B(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(op.B(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(op.B(0, 1), intercept, 1e-12);
  EXPECT_NEAR(op.B(1, 1), slope, 1e-12);
}

TEST(Stage1, SingularGramThrows) {
  Rng rng(3);
  Dataset d = scalar_design(10, rng);
  d.z.setConstant(0.5);
  EXPECT_THROW(rdiv_stage1(d, kLine, kLine, 0.0), NumericalError);
}

TEST(RdivFit, Examples) {
  Rng rng(4);
  Dataset d = scalar_design(50, rng);
  const auto op = rdiv_stage1(d, kCubic, kCubic, 1e-8);
  Dataset zero = d;
  zero.y.setZero();
  EXPECT_LT(rdiv_fit(zero, op, 0.1).coeffs.norm(), 1e-14);
  EXPECT_LT(rdiv_fit(d, op, 1e8).coeffs.norm(), 1e-6);
  EXPECT_THROW(rdiv_fit(d, op, -1.0), std::invalid_argument);
}

TEST(RdivFit, MatchesGridMinimum) {
  Rng rng(5);
  Dataset d = scalar_design(8, rng);
  const auto op = rdiv_stage1(d, kLine, kLine, 1e-6);
  const RdivEstimator est(d, op);
  const double lambda = 0.05;
  const FitResult fit = est.fit(lambda);
  const auto [arg, best] = oracle::grid_zoom_min(
      [&](const Eigen::Vector2d& c) { return est.objective(c, lambda); }, Eigen::Vector2d::Zero(), 10.0, 41, 14);
  EXPECT_NEAR(est.objective(fit.coeffs, lambda), best, 1e-8);
  EXPECT_LT((arg - fit.coeffs).norm(), 1e-4);
}

TEST(RdivLoss, PointwiseDefinition) {
  Rng rng(6);
  Dataset d = scalar_design(30, rng);
  const auto op = rdiv_stage1(d, kCubic, kCubic, 1e-6);
  EXPECT_NEAR(rdiv_loss(d, op, Eigen::VectorXd::Zero(4)), d.y.squaredNorm() / 30.0, 1e-14);
  const Eigen::VectorXd c = standard_normal(rng, 4);
  const Eigen::MatrixXd phi = kCubic.evaluate(d.z);
  double sum = 0.0;
  for (int i = 0; i < 30; ++i) {
    double th = 0.0;
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) th += phi(i, j) * op.B(j, k) * c(k);
    sum += (d.y(i) - th) * (d.y(i) - th);
  }
  EXPECT_NEAR(rdiv_loss(d, op, c), sum / 30.0, 1e-12);
}

TEST(RdivLoss, ZeroAtExactFit) {
  Rng rng(7);
  Dataset d = scalar_design(30, rng);
  d.z = d.x;
  const auto op = rdiv_stage1(d, kCubic, kCubic, 0.0);
  const Eigen::VectorXd c = standard_normal(rng, 4);
  d.y = kCubic.evaluate_function(d.x, c);
  EXPECT_LT(rdiv_loss(d, op, c), 1e-18);
}

TEST(TraeInner, ZeroWhenMomentsMatch) {
  Rng rng(8);
  Dataset d = scalar_design(25, rng);
  const auto m = MomentFunctional::outcome();
  const TraeEstimator est(d, m, kLine, kLine, Side::X, 0.0);
  const Eigen::VectorXd c = est.cross_moment().fullPivLu().solve(est.moment_vector());
  EXPECT_LT(std::abs(est.inner_max(c).value), 1e-14);
}

TEST(TraeInner, ConstantAdversaryIsSquaredMeanGap) {
  Rng rng(9);
  Dataset d = scalar_design(25, rng);
  const auto one = SieveBasis::polynomial(1, 0);
  const Eigen::VectorXd c = standard_normal(rng, 2);
  const InnerMax im = trae_inner_max(d, MomentFunctional::outcome(), kLine, one, c, 0.0);
  const double gap = d.y.mean() - kLine.evaluate_function(d.x, c).mean();
  EXPECT_NEAR(im.value, gap * gap, 1e-13);
}

TEST(TraeInner, MatchesExhaustiveGrid) {
  Rng rng(10);
  Dataset d = scalar_design(10, rng);
  const Eigen::VectorXd c = 0.3 * standard_normal(rng, 2);
  const InnerMax im = trae_inner_max(d, MomentFunctional::outcome(), kLine, kLine, c, 0.0);
  ASSERT_LT(im.f_coeffs.cwiseAbs().maxCoeff(), 2.9);
  const Eigen::VectorXd h = kLine.evaluate_function(d.x, c);
  auto objective = [&](double f0, double f1) {
    double s = 0.0;
    for (int i = 0; i < 10; ++i) {
      const double f = f0 + f1 * d.z(i, 0);
      s += 2.0 * d.y(i) * f - 2.0 * h(i) * f - f * f;
    }
    return s / 10.0;
  };
  const double grid = oracle::exhaustive_max(objective, 3.0, 2e-3);
  EXPECT_NEAR(im.value, grid, 5e-3);
  EXPECT_GE(im.value, grid - 1e-12);
}

TEST(TraeFit, Examples) {
  Rng rng(11);
  Dataset d = scalar_design(40, rng);
  const auto m = MomentFunctional::outcome();
  Dataset zero = d;
  zero.y.setZero();
  EXPECT_LT(trae_fit(zero, m, kCubic, kCubic, 0.1).coeffs.norm(), 1e-14);
  const TraeEstimator est(d, m, kCubic, kCubic, Side::X);
  const FitResult big = est.fit(1e8);
  EXPECT_LT(big.coeffs.norm(), 1e-6);
  EXPECT_NEAR(big.empirical_loss, est.inner_max(Eigen::VectorXd::Zero(4)).value, 1e-6);
}

TEST(TraeFit, PerturbationsDoNotImproveObjective) {
  Rng rng(12);
  Dataset d = scalar_design(60, rng);
  const TraeEstimator est(d, MomentFunctional::outcome(), kCubic, kCubic, Side::X);
  for (double lambda : {1e-3, 0.1, 2.0}) {
    const FitResult fit = est.fit(lambda);
    const double best = est.objective(fit.coeffs, lambda);
    for (int t = 0; t < 20; ++t) {
      const Eigen::VectorXd e = 1e-3 * standard_normal(rng, 4);
      EXPECT_GE(est.objective(fit.coeffs + e, lambda), best - 1e-12);
    }
  }
}

TEST(TraeFit, DualIsSwappedPrimalBitForBit) {
  Rng rng(13);
  Dataset d = scalar_design(50, rng);
  const auto m = MomentFunctional::outcome();
  const auto bq = SieveBasis::trigonometric(1, 4), bs = SieveBasis::polynomial(1, 2);
  const FitResult dual = trae_dual_fit(d, m, bq, bs, 0.07);
  const FitResult swapped = trae_fit(d.swapped(), m, bq, bs, 0.07);
  ASSERT_EQ(dual.coeffs.size(), swapped.coeffs.size());
  for (Eigen::Index k = 0; k < dual.coeffs.size(); ++k) EXPECT_EQ(dual.coeffs(k), swapped.coeffs(k));
  EXPECT_EQ(dual.empirical_loss, swapped.empirical_loss);
}

TEST(TraeFit, PopulationIdentityWhenOperatorIsExact) {
  // X = Z and basis_f = basis_h: the inner maximum is E_n[(h - h0)^2] when Y = h0(X).
  Rng rng(14);
  Dataset d = scalar_design(80, rng);
  d.z = d.x;
  const Eigen::VectorXd c0 = standard_normal(rng, 4);
  d.y = kCubic.evaluate_function(d.x, c0);
  const TraeEstimator est(d, MomentFunctional::outcome(), kCubic, kCubic, Side::X, 0.0);
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd c = standard_normal(rng, 4);
    const Eigen::VectorXd diff = kCubic.evaluate_function(d.x, c) - d.y;
    EXPECT_NEAR(est.inner_max(c).value, diff.squaredNorm() / 80.0, 1e-8);
  }
}

TEST(TraeFit, SingularAdversaryGramThrows) {
  Rng rng(15);
  Dataset d = scalar_design(20, rng);
  const auto dup = SieveBasis::custom(1, {[](std::span<const double>) { return 1.0; },
                                          [](std::span<const double>) { return 1.0; }});
  EXPECT_THROW(trae_fit(d, MomentFunctional::outcome(), kLine, dup, 0.1, 0.0), NumericalError);
}

TEST(Moments, Linearity) {
  Rng rng(16);
  Dataset d = scalar_design(30, rng);
  const auto ate = MomentFunctional::ate(0);
  const Eigen::VectorXd a = standard_normal(rng, 4), b = standard_normal(rng, 4);
  const Eigen::VectorXd lhs = ate.evaluate_function(d, kCubic, Side::X, 2.0 * a - 3.0 * b);
  const Eigen::VectorXd rhs =
      2.0 * ate.evaluate_function(d, kCubic, Side::X, a) - 3.0 * ate.evaluate_function(d, kCubic, Side::X, b);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Moments, AteIsDifferenceOfCounterfactuals) {
  Rng rng(17);
  Dataset d = scalar_design(10, rng);
  d.x.conservativeResize(10, 2);
  for (int i = 0; i < 10; ++i) d.x(i, 1) = uniform01(rng);
  const auto basis = SieveBasis::polynomial(2, 2);
  const Eigen::VectorXd c = standard_normal(rng, basis.size());
  const Eigen::VectorXd got = MomentFunctional::ate(0).evaluate_function(d, basis, Side::X, c);
  for (int i = 0; i < 10; ++i) {
    Eigen::MatrixXd p1(1, 2), p0(1, 2);
    p1 << 1.0, d.x(i, 1);
    p0 << 0.0, d.x(i, 1);
    const double expect = basis.evaluate_function(p1, c)(0) - basis.evaluate_function(p0, c)(0);
    EXPECT_NEAR(got(i), expect, 1e-13);
  }
}

TEST(Loss, DecreasesWithLambdaAndMatchesFitRecord) {
  Rng rng(18);
  Dataset d = scalar_design(100, rng);
  const TraeEstimator trae(d, MomentFunctional::outcome(), kCubic, kCubic, Side::X);
  const RdivEstimator rdiv(d, rdiv_stage1(d, kCubic, kCubic, 1e-6));
  for (const QuadraticEstimator* est : {static_cast<const QuadraticEstimator*>(&trae),
                                        static_cast<const QuadraticEstimator*>(&rdiv)}) {
    double prev = -1.0;
    for (double lambda = 1e-6; lambda <= 4.0; lambda *= 2.0) {
      const FitResult f = est->fit(lambda);
      EXPECT_EQ(loss_of(*est, f.coeffs), f.empirical_loss);
      EXPECT_GE(f.empirical_loss, prev - 1e-12) << est->label() << " lambda=" << lambda;
      prev = f.empirical_loss;
    }
  }
}

TEST(Kinds, ParseRoundTrip) {
  EXPECT_EQ(parse_estimator_kind("rdiv"), EstimatorKind::Rdiv);
  EXPECT_EQ(parse_estimator_kind(to_string(EstimatorKind::Trae)), EstimatorKind::Trae);
  EXPECT_THROW(parse_estimator_kind("gmm"), std::invalid_argument);
}

TEST(SolvePsd, RankDeficientGivesMinimumNorm) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2, 2);
  h(0, 0) = 1.0;
  const Eigen::VectorXd x = solve_psd(h, Eigen::Vector2d(2.0, 0.0), "test");
  EXPECT_NEAR(x(0), 2.0, 1e-14);
  EXPECT_EQ(x(1), 0.0);
  EXPECT_THROW(solve_psd(-Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1.0, 1.0), "test"), NumericalError);
}
