#include <cmath>

#include <gtest/gtest.h>

#include "dpreg/discrepancy.hpp"
#include "dpreg/error.hpp"
#include "dpreg/harness.hpp"
#include "oracles.hpp"

using namespace dpreg;
using spectral::NoisyObservation;
using spectral::SpectralProblem;

namespace {

SpectralEstimator single_mode_estimator() {
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  return SpectralEstimator(SpectralProblem<double>(one, one, 1.0, one), NoisyObservation<double>(one, 0.25));
}

DpConfig fixed(double delta) {
  DpConfig c;
  c.schedule = {ScheduleKind::Fixed, delta};
  return c;
}

// Loss c / (1 + lambda) style fitter that fails below a threshold.
class FlakyEstimator final : public Estimator {
 public:
  FitResult fit(double lambda) const override {
    if (lambda < 0.3) throw NumericalError("synthetic failure");
    FitResult f;
    f.coeffs = Eigen::VectorXd::Constant(1, lambda);
    f.lambda = lambda;
    f.empirical_loss = loss(f.coeffs);
    return f;
  }
  double loss(const Eigen::Ref<const Eigen::VectorXd>& c) const override { return c(0); }
  Eigen::Index sample_size() const override { return 100; }
  std::string label() const override { return "flaky"; }
};

}  // namespace

TEST(Schedule, Values) {
  const double n = 1000.0;
  EXPECT_NEAR(noise_level({ScheduleKind::RdivSqrt, 30.0}, 1000), 30.0 * std::sqrt(std::log(n) / n), 1e-14);
  EXPECT_NEAR(noise_level({ScheduleKind::RdivSqrt, 30.0}, 1000), 2.493, 1e-3);
  EXPECT_NEAR(noise_level({ScheduleKind::TraeSquared, 15.0}, 1000), 0.1036, 1e-4);
  EXPECT_EQ(noise_level({ScheduleKind::Fixed, 0.3}, 1000), 0.3);
  EXPECT_THROW(noise_level({ScheduleKind::TraeSquared, 1.0}, 1), std::invalid_argument);
  EXPECT_GT(noise_level({ScheduleKind::TraeSquared, 1.0}, 500), noise_level({ScheduleKind::TraeSquared, 1.0}, 5000));
  EXPECT_EQ(parse_schedule_kind("trae"), ScheduleKind::TraeSquared);
  EXPECT_THROW(parse_schedule_kind("cubic"), std::invalid_argument);
}

TEST(RunDp, SingleModeFixture) {
  const auto est = single_mode_estimator();
  const DpOutcome o = run_dp(est, fixed(0.25));
  EXPECT_EQ(o.lambda_dp, 0.25);
  EXPECT_EQ(o.iterations, 4);
  EXPECT_EQ(o.k_star, 3);
  EXPECT_TRUE(o.bracket_ok);
  EXPECT_TRUE(o.converged);
  EXPECT_TRUE(certify_bracket(o, 0.25));
  const double expect[] = {2.0 / 3.0, 0.5, 1.0 / 3.0, 0.2};
  ASSERT_EQ(o.path.size(), 4u);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(o.path.entries[k].fit.empirical_loss, expect[k], 1e-15);
  EXPECT_TRUE(o.path.strictly_decreasing());
}

TEST(RunDp, StopsAtFirstStepWhenDeltaIsLarge) {
  const DpOutcome o = run_dp(single_mode_estimator(), fixed(0.9));
  EXPECT_EQ(o.lambda_dp, 2.0);
  EXPECT_EQ(o.iterations, 1);
  EXPECT_FALSE(o.bracket_ok);
  EXPECT_TRUE(o.converged);
}

TEST(RunDp, GridMembershipAndCap) {
  DpConfig c = fixed(1e-9);
  c.rho = 0.7;
  c.max_iters = 12;
  const DpOutcome o = run_dp(single_mode_estimator(), c);
  EXPECT_FALSE(o.converged);
  EXPECT_FALSE(o.bracket_ok);
  EXPECT_EQ(o.iterations, 12);
  EXPECT_FALSE(o.warnings.empty());
  double grid = 2.0;
  for (const auto& e : o.path.entries) {
    EXPECT_EQ(e.lambda, grid);
    grid *= 0.7;
  }
  EXPECT_EQ(o.lambda_dp, o.path.entries.back().lambda);
}

TEST(RunDp, WarnsWhenRatioExceedsTwo) {
  DpConfig c = fixed(0.25);
  c.rho = 0.25;
  const DpOutcome o = run_dp(single_mode_estimator(), c);
  EXPECT_FALSE(o.warnings.empty());
}

TEST(RunDp, PropagatesFitterErrorsWithLambda) {
  try {
    run_dp(FlakyEstimator{}, fixed(1e-3));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("0.25"), std::string::npos) << e.what();
  }
}

TEST(RunDp, RejectsBadConfig) {
  DpConfig c = fixed(0.1);
  c.rho = 1.0;
  EXPECT_THROW(run_dp(single_mode_estimator(), c), std::invalid_argument);
  c = fixed(0.1);
  c.lambda0 = 0.0;
  EXPECT_THROW(run_dp(single_mode_estimator(), c), std::invalid_argument);
}

TEST(Bracket, TamperedOutcomeFails) {
  DpOutcome o = run_dp(single_mode_estimator(), fixed(0.25));
  EXPECT_TRUE(certify_bracket(o, 0.25));
  EXPECT_FALSE(certify_bracket(o, 0.1));
  o.path.entries[2].fit.empirical_loss = 0.2;
  EXPECT_FALSE(certify_bracket(o, 0.25));
}

TEST(RunDp, TerminatesWithinLogBound) {
  for (double beta : {0.5, 1.0, 2.0}) {
    const auto p = spectral::make_source_problem<double>(100, 1.0, beta, Eigen::VectorXd::Ones(100));
    const SpectralEstimator est(p, spectral::noiseless_observation(p));
    for (double delta : {1e-2, 1e-3, 1e-4}) {
      const double root = oracle::bisect(
          [&](double l) { return spectral::tikhonov_residual(p, spectral::noiseless_observation(p), l) - delta; },
          1e-14, 2.0);
      DpConfig c = fixed(delta);
      c.max_iters = 60;
      const DpOutcome o = run_dp(est, c);
      EXPECT_LE(o.k_star, static_cast<int>(std::ceil(std::log2(2.0 / root))));
      EXPECT_LE(o.lambda_dp, root);
      EXPECT_TRUE(o.bracket_ok);
    }
  }
}

TEST(RunDp, SelectionSlopeOnSquaredResidual) {
  // Squared-residual loss against threshold delta: lambda_dp ~ delta^{1 / min(2, beta + 1)}.
  for (double beta : {0.5, 1.0, 2.0}) {
    const auto p = spectral::make_source_problem<double>(200, 1.0, beta, Eigen::VectorXd::Ones(200));
    const SpectralEstimator est(p, spectral::noiseless_observation(p), SpectralEstimator::LossForm::Squared);
    std::vector<double> deltas, lambdas;
    for (int j = 4; j <= 12; ++j) {
      DpConfig c = fixed(std::ldexp(1.0, -j));
      c.max_iters = 80;
      deltas.push_back(c.schedule.c_d);
      lambdas.push_back(run_dp(est, c).lambda_dp);
    }
    const double slope = fit_rate(deltas, lambdas).slope;
    EXPECT_GE(slope, 1.0 / std::min(2.0, beta + 1.0) - 0.2) << "beta=" << beta;
    EXPECT_LE(slope, 1.2) << "beta=" << beta;
  }
}
