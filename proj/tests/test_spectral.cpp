#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "dpreg/io.hpp"
#include "dpreg/spectral.hpp"
#include "oracles.hpp"

using namespace dpreg;
using namespace dpreg::spectral;

namespace {

SpectralProblem<double> single_mode() {
  return SpectralProblem<double>(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1), 1.0, Eigen::VectorXd::Ones(1));
}

Eigen::MatrixXd random_orthogonal(int d, Rng& rng) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = standard_normal(rng, 1)(0);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
}

}  // namespace

TEST(SourceProblem, SingleMode) {
  const auto p = make_source_problem<double>(1, 1.0, 2.0, Eigen::VectorXd::Ones(1));
  EXPECT_EQ(p.singular_values()(0), 1.0);
  EXPECT_EQ(p.h0_coeffs()(0), 1.0);
}

TEST(SourceProblem, HarmonicDecay) {
  const auto p = make_source_problem<double>(3, 1.0, 1.0, Eigen::VectorXd::Ones(3));
  EXPECT_DOUBLE_EQ(p.singular_values()(1), 0.5);
  EXPECT_DOUBLE_EQ(p.singular_values()(2), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.h0_coeffs()(2), 1.0 / 3.0);
}

TEST(SourceProblem, QuadraticDecayHalfSmoothness) {
  const auto p = make_source_problem<double>(50, 2.0, 0.5, Eigen::VectorXd::Ones(50));
  EXPECT_NEAR(p.h0_coeffs()(24), 0.04, 1e-15);
  EXPECT_NEAR(p.singular_values()(24), 1.0 / 625.0, 1e-15);
}

TEST(SourceProblem, RejectsBadInput) {
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(3);
  EXPECT_THROW(make_source_problem<double>(3, 1.0, 1.0, w, 1.5), std::invalid_argument);
  EXPECT_THROW(make_source_problem<double>(3, 0.0, 1.0, w), std::invalid_argument);
  EXPECT_THROW(make_source_problem<double>(3, 1.0, -1.0, w), std::invalid_argument);
  EXPECT_THROW(make_source_problem<double>(4, 1.0, 1.0, w), std::invalid_argument);
}

TEST(SpectralProblemInvariants, RejectsViolations) {
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(2);
  Eigen::VectorXd rising(2);
  rising << 0.5, 0.9;
  EXPECT_THROW(SpectralProblem<double>(rising, rising, 1.0, one), std::invalid_argument);
  Eigen::VectorXd big(2);
  big << 1.5, 0.5;
  EXPECT_THROW(SpectralProblem<double>(big, big, 1.0, one), std::invalid_argument);
  Eigen::VectorXd s(2), a(2);
  s << 1.0, 0.5;
  a << 1.0, 0.6;  // should be 0.5 for beta = 1, w0 = 1
  EXPECT_THROW(SpectralProblem<double>(s, a, 1.0, one), std::invalid_argument);
}

TEST(Observation, RejectsNoiseAboveBound) {
  const auto p = single_mode();
  Eigen::VectorXd r(1);
  r << 1.3;
  EXPECT_NO_THROW(NoisyObservation<double>(r, 0.3, p));
  EXPECT_THROW(NoisyObservation<double>(r, 0.2, p), std::invalid_argument);
}

TEST(Observation, NoiseHasExactNorm) {
  Rng rng(7);
  const auto p = make_source_problem<double>(20, 1.0, 1.0, Eigen::VectorXd::Ones(20));
  const auto obs = make_noisy_observation(p, 0.125, rng);
  EXPECT_NEAR((obs.r_coeffs() - p.exact_rhs()).norm(), 0.125, 1e-15);
}

TEST(Tikhonov, SingleModeValues) {
  const auto p = single_mode();
  const auto obs = noiseless_observation(p);
  EXPECT_DOUBLE_EQ(tikhonov_solve(p, obs, 1.0).coeffs(0), 0.5);
  EXPECT_DOUBLE_EQ(tikhonov_solve(p, obs, 0.0).coeffs(0), 1.0);
  EXPECT_THROW(tikhonov_solve(p, obs, -1.0), std::invalid_argument);
}

TEST(Tikhonov, MatchesDenseNormalEquations) {
  Rng rng(11);
  for (int d : {1, 3, 7, 10}) {
    const auto p = make_source_problem<double>(d, 1.5, 1.0, standard_normal(rng, d));
    const auto obs = make_noisy_observation(p, 0.05, rng);
    const Eigen::MatrixXd u = random_orthogonal(d, rng), v = random_orthogonal(d, rng);
    const Eigen::MatrixXd t = u * p.singular_values().asDiagonal() * v.transpose();
    const Eigen::VectorXd r = u * obs.r_coeffs();
    for (double lambda : {1e-3, 0.1, 1.0}) {
      const Eigen::MatrixXd h = t.transpose() * t + lambda * Eigen::MatrixXd::Identity(d, d);
      const Eigen::VectorXd dense = h.fullPivLu().solve(t.transpose() * r);
      const Eigen::VectorXd spectral = v * tikhonov_solve(p, obs, lambda).coeffs;
      EXPECT_LT((dense - spectral).norm(), 1e-10 * std::max(1.0, dense.norm())) << "d=" << d << " lambda=" << lambda;
    }
  }
}

TEST(Metrics, WeakSingleMode) {
  const auto p = single_mode();
  EXPECT_DOUBLE_EQ(weak_metric(p, regularized_solution(p, 1.0)), 0.5);
  EXPECT_EQ(weak_metric(p, regularized_solution(p, 0.0)), 0.0);
}

TEST(Metrics, WeakSeriesSum) {
  Eigen::VectorXd s(3);
  s << 1.0, 0.5, 1.0 / 3.0;
  const SpectralProblem<double> p(s, s, 1.0, Eigen::VectorXd::Ones(3));
  const double lambda = 0.25;
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double si = s(i);
    sum += si * si * si * si * lambda * lambda / ((si * si + lambda) * (si * si + lambda));
  }
  EXPECT_NEAR(std::pow(weak_metric(p, regularized_solution(p, lambda)), 2), sum, 1e-14);
}

TEST(Metrics, StrongBruteForce) {
  const auto p = make_source_problem<double>(50, 1.0, 1.0, Eigen::VectorXd::Ones(50));
  const double lambda = 0.01;
  double sum = 0.0;
  for (int i = 1; i <= 50; ++i) {
    const double si = 1.0 / i, ai = si;
    const double hi = si * si / (si * si + lambda) * ai;
    sum += (hi - ai) * (hi - ai);
  }
  EXPECT_NEAR(std::pow(strong_metric(p, regularized_solution(p, lambda)), 2), sum, 1e-14);
}

TEST(Metrics, FilterFactorsInUnitInterval) {
  const auto p = make_source_problem<double>(30, 1.0, 2.0, Eigen::VectorXd::Ones(30));
  for (double lambda : {1e-6, 1e-2, 1.0, 2.0}) {
    const auto sol = regularized_solution(p, lambda);
    for (int i = 0; i < 30; ++i) {
      const double f = sol.coeffs(i) / p.h0_coeffs()(i);
      EXPECT_GE(f, 0.0);
      EXPECT_LE(f, 1.0);
    }
  }
}

TEST(Metrics, MonotoneInLambda) {
  const auto p = make_source_problem<double>(40, 1.0, 1.0, Eigen::VectorXd::Ones(40));
  double prev_w = -1.0, prev_s = -1.0;
  for (double lambda = 1e-6; lambda <= 2.0; lambda *= 2.0) {
    const auto sol = regularized_solution(p, lambda);
    const double w = weak_metric(p, sol), s = strong_metric(p, sol);
    EXPECT_GE(w, prev_w);
    EXPECT_GE(s, prev_s);
    prev_w = w;
    prev_s = s;
  }
}

TEST(Lemmas, BoundsHoldOnRandomProblems) {
  Rng rng(2024);
  std::uniform_real_distribution<double> beta_d(0.2, 3.0), p_d(0.5, 2.0), log_l(std::log(1e-6), std::log(2.0));
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + static_cast<int>(uniform_below(rng, 50));
    const auto p = make_source_problem<double>(d, p_d(rng), beta_d(rng), standard_normal(rng, d));
    const double l1 = std::exp(log_l(rng)), l2 = std::exp(log_l(rng));
    const auto s1 = regularized_solution(p, l1), s2 = regularized_solution(p, l2);
    EXPECT_GE(std::pow(weak_metric(p, s1), 2), lower_bound_constant(p) * l1 * l1 * (1 - 1e-12));
    EXPECT_LE((s1.coeffs - s2.coeffs).norm(),
              holder_constant(p) * std::pow(std::abs(l1 - l2), holder_exponent(p)) * (1 + 1e-12) + 1e-300);
    EXPECT_LE(strong_metric(p, s1), interpolation_bound(p, s1) * (1 + 1e-12));
  }
}

TEST(ClassicalDp, SmallDataIsInfinity) {
  Eigen::VectorXd s(1), a(1);
  s << 1.0;
  a << 0.01;
  const SpectralProblem<double> p(s, a, 1.0, a);
  const auto res = classical_dp_select(p, NoisyObservation<double>(a, 0.1), ClassicalDpOptions<double>{.k = 1.0});
  EXPECT_TRUE(res.solution.is_infinite());
  EXPECT_EQ(res.solution.coeffs(0), 0.0);
}

TEST(ClassicalDp, BracketsTheResidualRoot) {
  const auto p = single_mode();
  const auto obs = noiseless_observation(p);
  NoisyObservation<double> stated(obs.r_coeffs(), 0.1);
  const auto res = classical_dp_select(p, stated, ClassicalDpOptions<double>{.k = 1.0});
  // residual lambda / (1 + lambda) = 0.1 at lambda = 1/9
  const double root = oracle::bisect([](double l) { return l / (1 + l) - 0.1; }, 0.0, 2.0);
  EXPECT_NEAR(root, 1.0 / 9.0, 1e-14);
  EXPECT_LE(res.lambda(), root);
  EXPECT_GT(res.lambda() / 0.5, root);
  EXPECT_TRUE(res.bracket_ok);
  double grid = 2.0;
  for (int j = 0; j < res.grid_index; ++j) grid *= 0.5;
  EXPECT_EQ(res.lambda(), grid);
}

TEST(ClassicalDp, GridExhaustionThrows) {
  const auto p = single_mode();
  EXPECT_THROW(classical_dp_select(p, NoisyObservation<double>(p.exact_rhs(), 0.0)), NumericalError);
}

TEST(ClassicalDp, FloatInstantiation) {
  using Vf = Eigen::VectorXf;
  const SpectralProblem<float> p(Vf::Ones(1), Vf::Ones(1), 1.0f, Vf::Ones(1));
  const auto sol = tikhonov_solve(p, noiseless_observation(p), 1.0f);
  EXPECT_FLOAT_EQ(sol.coeffs(0), 0.5f);
}

TEST(SpectralJson, BitExactRoundTrip) {
  Rng rng(3);
  const auto p = make_source_problem<double>(25, 1.3, 0.7, standard_normal(rng, 25), 0.9);
  const auto back = spectral_problem_from_json(Json::parse(to_json(p).dump()));
  for (int i = 0; i < 25; ++i) {
    EXPECT_EQ(back.singular_values()(i), p.singular_values()(i));
    EXPECT_EQ(back.h0_coeffs()(i), p.h0_coeffs()(i));
    EXPECT_EQ(back.w0_coeffs()(i), p.w0_coeffs()(i));
  }
  EXPECT_EQ(back.beta(), p.beta());
}
