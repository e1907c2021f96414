#include "dpreg/discrepancy.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "dpreg/error.hpp"

namespace dpreg {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "rdiv_sqrt" || name == "rdiv") return ScheduleKind::RdivSqrt;
  if (name == "trae_squared" || name == "trae") return ScheduleKind::TraeSquared;
  if (name == "fixed") return ScheduleKind::Fixed;
  throw std::invalid_argument(fmt::format("unknown noise schedule '{}' (expected rdiv, trae or fixed)", name));
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::RdivSqrt: return "rdiv_sqrt";
    case ScheduleKind::TraeSquared: return "trae_squared";
    case ScheduleKind::Fixed: return "fixed";
  }
  return "?";
}

double noise_level(const NoiseSchedule& schedule, Eigen::Index n) {
  if (!(schedule.c_d > 0.0)) throw std::invalid_argument("noise_level: c_d must be positive");
  if (schedule.kind == ScheduleKind::Fixed) return schedule.c_d;
  if (n < 2) throw std::invalid_argument(fmt::format("noise_level: need n >= 2, got {}", n));
  const double nn = static_cast<double>(n);
  switch (schedule.kind) {
    case ScheduleKind::RdivSqrt: return schedule.c_d * std::sqrt(std::log(nn) / nn);
    case ScheduleKind::TraeSquared: return schedule.c_d * std::log(nn) / nn;
    case ScheduleKind::Fixed: return schedule.c_d;
  }
  throw std::invalid_argument("noise_level: bad schedule kind");
}

void DpConfig::validate() const {
  if (!(lambda0 > 0.0) || std::isinf(lambda0)) throw std::invalid_argument("dp: lambda0 must be finite and > 0");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("dp: rho must lie in (0, 1)");
  if (max_iters < 1) throw std::invalid_argument("dp: max_iters must be >= 1");
  if (!(schedule.c_d > 0.0)) throw std::invalid_argument("dp: cd must be positive");
}

DpOutcome run_dp(const Estimator& estimator, const DpConfig& config) {
  config.validate();
  return run_dp(estimator, config, noise_level(config.schedule, estimator.sample_size()));
}

DpOutcome run_dp(const Estimator& estimator, const DpConfig& config, double delta) {
  config.validate();
  if (!(delta >= 0.0) || std::isinf(delta)) throw std::invalid_argument("run_dp: delta must be finite and >= 0");
  DpOutcome out;
  out.delta = delta;
  if (config.rho < 0.5)
    out.warnings.push_back(fmt::format("rho = {} < 1/2: predecessor lies outside [lambda, 2 lambda], bracket cannot certify", config.rho));

  double lambda = config.lambda0;
  for (int j = 0; j < config.max_iters; ++j) {
    if (j > 0) lambda *= config.rho;
    FitResult fit;
    try {
      fit = estimator.fit(lambda);
    } catch (const NumericalError& e) {
      throw NumericalError(fmt::format("{} fit failed at step {} (lambda = {}): {}", estimator.label(), j, lambda, e.what()));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(fmt::format("{} fit failed at step {} (lambda = {}): {}", estimator.label(), j, lambda, e.what()));
    }
    if (!std::isfinite(fit.empirical_loss))
      throw NumericalError(fmt::format("{} fit at step {} (lambda = {}) produced a non-finite loss", estimator.label(), j, lambda));
    const bool stop = fit.empirical_loss <= delta;
    out.path.entries.push_back({lambda, fit});
    if (stop) {
      out.converged = true;
      break;
    }
  }
  const PathEntry& last = out.path.entries.back();
  out.lambda_dp = last.lambda;
  out.fit = last.fit;
  out.iterations = static_cast<int>(out.path.size());
  out.k_star = out.iterations - 1;
  out.bracket_ok = out.converged && certify_bracket(out, delta);
  if (!out.converged)
    out.warnings.push_back(fmt::format("no lambda reached loss <= delta = {} within {} iterations; returning lambda = {}",
                                       delta, config.max_iters, out.lambda_dp));
  return out;
}

bool certify_bracket(const DpOutcome& outcome, double delta) {
  const auto& e = outcome.path.entries;
  if (e.size() < 2) return false;
  const PathEntry& cur = e.back();
  const PathEntry& prev = e[e.size() - 2];
  if (cur.lambda != outcome.lambda_dp) return false;
  return cur.fit.empirical_loss <= delta && delta <= prev.fit.empirical_loss && prev.lambda <= 2.0 * cur.lambda &&
         prev.lambda > cur.lambda;
}

SpectralEstimator::SpectralEstimator(spectral::SpectralProblem<double> problem,
                                     spectral::NoisyObservation<double> observation, LossForm form)
    : problem_(std::move(problem)), observation_(std::move(observation)), form_(form) {
  if (observation_.dim() != problem_.dim()) throw std::invalid_argument("SpectralEstimator: dimension mismatch");
}

double SpectralEstimator::loss(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const {
  if (coeffs.size() != problem_.dim()) throw std::invalid_argument("SpectralEstimator::loss: dimension mismatch");
  const double r = (problem_.singular_values().cwiseProduct(coeffs) - observation_.r_coeffs()).norm();
  return form_ == LossForm::Norm ? r : r * r;
}

FitResult SpectralEstimator::fit(double lambda) const {
  FitResult out;
  out.coeffs = spectral::tikhonov_solve(problem_, observation_, lambda).coeffs;
  out.lambda = lambda;
  const double r = spectral::tikhonov_residual(problem_, observation_, lambda);
  out.empirical_loss = form_ == LossForm::Norm ? r : r * r;
  out.norm_penalty = out.coeffs.squaredNorm();
  return out;
}

}  // namespace dpreg
