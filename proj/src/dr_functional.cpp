#include "dpreg/dr_functional.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

#include "dpreg/parallel.hpp"
#include "dpreg/rng.hpp"

namespace dpreg {

Split split(const Dataset& data, const SplitPlan& plan) {
  const Eigen::Index n = data.size();
  if (n < 4) throw std::invalid_argument("split: need n >= 4");
  if (!(plan.fit_fraction > 0.0 && plan.fit_fraction < 1.0))
    throw std::invalid_argument("split: fit_fraction must lie in (0, 1)");
  const auto n_fit = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * plan.fit_fraction + 0.5)), 1, n - 1);

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(plan.seed);
  for (std::size_t i = perm.size() - 1; i > 0; --i)
    std::swap(perm[i], perm[uniform_below(rng, i + 1)]);

  Split out;
  out.fit_rows.assign(perm.begin(), perm.begin() + n_fit);
  out.eval_rows.assign(perm.begin() + n_fit, perm.end());
  std::sort(out.fit_rows.begin(), out.fit_rows.end());
  std::sort(out.eval_rows.begin(), out.eval_rows.end());
  out.fit = data.subset(out.fit_rows);
  out.eval = data.subset(out.eval_rows);
  return out;
}

double normal_critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  const boost::math::normal_distribution<double> std_normal;
  return boost::math::quantile(std_normal, 0.5 + level / 2.0);
}

FunctionalEstimate dr_estimate(const Dataset& eval, const FittedFunction& h, const FittedFunction& q,
                               const MomentFunctional& target, const MomentFunctional& outcome, double level) {
  const Eigen::Index n = eval.size();
  if (n < 1) throw std::invalid_argument("dr_estimate: empty evaluation fold");
  const double z = normal_critical_value(level);
  FunctionalEstimate est;
  est.level = level;
  est.n_eval = n;
  est.components.resize(n, 3);
  est.components.col(0) = target.evaluate_function(eval, h.basis, Side::X, h.coeffs);
  est.components.col(1) = outcome.evaluate_function(eval, q.basis, Side::Z, q.coeffs);
  est.components.col(2) = q.basis.evaluate_function(eval.z, q.coeffs).cwiseProduct(h.basis.evaluate_function(eval.x, h.coeffs));
  const Eigen::VectorXd rho = est.influence();
  const double nn = static_cast<double>(n);
  est.theta_hat = rho.sum() / nn;
  const double var = std::max(0.0, rho.squaredNorm() / nn - est.theta_hat * est.theta_hat);
  est.se = std::sqrt(var / nn);
  est.ci_low = est.theta_hat - z * est.se;
  est.ci_high = est.theta_hat + z * est.se;
  return est;
}

namespace {

struct SideFit {
  FitResult fit;
  std::optional<DpOutcome> dp;
};

SideFit fit_side(const TraeEstimator& est, const DpConfig& dp, const std::optional<double>& fixed) {
  if (fixed) return {est.fit(*fixed), std::nullopt};
  DpOutcome outcome = run_dp(est, dp);
  FitResult fit = outcome.fit;
  return {std::move(fit), std::move(outcome)};
}

}  // namespace

DrOutcome adaptive_dr_pipeline(const Dataset& data, const DrConfig& config) {
  Split parts = split(data, config.plan);
  const Dataset& fit = parts.fit;
  auto prep = [&](const SieveBasis& b, Side side) {
    return config.normalize_bases ? b.normalized(fit.features(side)) : b;
  };
  const SieveBasis bh = prep(config.basis_h, Side::X);
  const SieveBasis bf = prep(config.basis_f, Side::Z);
  const SieveBasis bq = prep(config.basis_q, Side::Z);
  const SieveBasis bs = prep(config.basis_s, Side::X);

  const TraeEstimator primal(fit, config.outcome, bh, bf, Side::X, config.ridge_inner);
  const TraeEstimator dual(fit, config.target, bq, bs, Side::Z, config.ridge_inner);
  SideFit p = fit_side(primal, config.primal_dp, config.fixed_lambda_primal);
  SideFit d = fit_side(dual, config.dual_dp, config.fixed_lambda_dual);

  FittedFunction h{bh, p.fit.coeffs};
  FittedFunction q{bq, d.fit.coeffs};
  FunctionalEstimate estimate = dr_estimate(parts.eval, h, q, config.target, config.outcome, config.level);
  DrOutcome out{std::move(estimate), std::move(h),          std::move(q),
                std::move(p.fit),    std::move(d.fit),      std::move(p.dp),
                std::move(d.dp),     std::move(parts.fit_rows), std::move(parts.eval_rows)};
  return out;
}

CoverageResult coverage_experiment(const DgpHandle& dgp, Eigen::Index n, int reps, const DrConfig& config,
                                   std::uint64_t seed, int jobs) {
  if (reps < 1) throw std::invalid_argument("coverage_experiment: reps must be >= 1");
  struct Rep {
    double theta_hat, se, theta0, low, high;
  };
  const auto un = static_cast<std::uint64_t>(n);
  const auto rows = parallel_map<Rep>(static_cast<std::size_t>(reps), jobs, [&](std::size_t r) {
    DgpSample sample = dgp(n, derive_seed(seed, {un, r}));
    DrConfig cfg = config;
    cfg.plan.seed = derive_seed(seed, {un, r, 1});
    const DrOutcome o = adaptive_dr_pipeline(sample.data, cfg);
    return Rep{o.estimate.theta_hat, o.estimate.se, sample.theta0, o.estimate.ci_low, o.estimate.ci_high};
  });
  CoverageResult out;
  out.reps = reps;
  double width = 0.0;
  for (const Rep& r : rows) {
    if (r.low <= r.theta0 && r.theta0 <= r.high) ++out.hits;
    width += r.high - r.low;
    out.theta_hat.push_back(r.theta_hat);
    out.se.push_back(r.se);
    out.theta0.push_back(r.theta0);
  }
  out.coverage = static_cast<double>(out.hits) / reps;
  out.mean_width = width / reps;
  return out;
}

}  // namespace dpreg
