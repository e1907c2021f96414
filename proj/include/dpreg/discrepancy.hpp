#pragma once

// Geometric lambda search: fit at lambda0, rho lambda0, ... and stop at the first fit whose
// empirical loss drops to the noise level delta.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpreg/estimators.hpp"
#include "dpreg/spectral.hpp"

namespace dpreg {

enum class ScheduleKind { RdivSqrt, TraeSquared, Fixed };

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::Fixed;
  double c_d = 1.0;
};

/// Accepts rdiv_sqrt / rdiv, trae_squared / trae, fixed.
ScheduleKind parse_schedule_kind(std::string_view name);
std::string to_string(ScheduleKind kind);

/// rdiv_sqrt: c_d sqrt(ln n / n); trae_squared: c_d ln n / n (both need n >= 2); fixed: c_d.
double noise_level(const NoiseSchedule& schedule, Eigen::Index n);

struct DpConfig {
  double lambda0 = 2.0;
  double rho = 0.5;
  int max_iters = 20;
  NoiseSchedule schedule;

  void validate() const;
};

struct DpOutcome {
  double lambda_dp = 0.0;
  double delta = 0.0;
  FitResult fit;
  RegularizedPath path;
  bool bracket_ok = false;
  bool converged = false;
  int iterations = 0;  // number of fits, k* + 1
  int k_star = 0;      // grid index of lambda_dp
  std::vector<std::string> warnings;
};

/// delta = noise_level(config.schedule, estimator.sample_size()).
DpOutcome run_dp(const Estimator& estimator, const DpConfig& config);
DpOutcome run_dp(const Estimator& estimator, const DpConfig& config, double delta);

/// L(lambda_dp) <= delta <= L(lambda') with lambda' the path predecessor and lambda' <= 2 lambda_dp.
bool certify_bracket(const DpOutcome& outcome, double delta);

/// Spectral oracle as a DP fitter. The loss is the residual ||T h - r|| (or its square).
class SpectralEstimator final : public Estimator {
 public:
  enum class LossForm { Norm, Squared };

  SpectralEstimator(spectral::SpectralProblem<double> problem, spectral::NoisyObservation<double> observation,
                    LossForm form = LossForm::Norm);

  FitResult fit(double lambda) const override;
  double loss(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const override;
  Eigen::Index sample_size() const override { return problem_.dim(); }
  std::string label() const override { return "spectral"; }

  const spectral::SpectralProblem<double>& problem() const { return problem_; }
  const spectral::NoisyObservation<double>& observation() const { return observation_; }

 private:
  spectral::SpectralProblem<double> problem_;
  spectral::NoisyObservation<double> observation_;
  LossForm form_;
};

}  // namespace dpreg
