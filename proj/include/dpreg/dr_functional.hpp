#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "dpreg/discrepancy.hpp"
#include "dpreg/estimators.hpp"
#include "dpreg/sieve.hpp"

namespace dpreg {

struct SplitPlan {
  std::uint64_t seed = 0;
  double fit_fraction = 0.5;
};

struct Split {
  std::vector<Eigen::Index> fit_rows;   // ascending
  std::vector<Eigen::Index> eval_rows;  // ascending
  Dataset fit;
  Dataset eval;
};

/// Seeded permutation, first round(n * fit_fraction) records fit, the rest evaluate. Needs n >= 4.
Split split(const Dataset& data, const SplitPlan& plan);

/// A fitted sieve element.
struct FittedFunction {
  SieveBasis basis;
  Eigen::VectorXd coeffs;
};

struct FunctionalEstimate {
  double theta_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double level = 0.95;
  Eigen::Index n_eval = 0;
  // n_eval x 3: target m~(W; h), outcome m(W; q), q(Z) h(X)
  Eigen::MatrixXd components;

  Eigen::VectorXd influence() const { return components.col(0) + components.col(1) - components.col(2); }
};

/// theta = E_n[m~(W; h) + m(W; q) - q(Z) h(X)] on the evaluation fold, with plug-in variance.
/// `target` is applied to h on X, `outcome` to q on Z.
FunctionalEstimate dr_estimate(const Dataset& eval, const FittedFunction& h, const FittedFunction& q,
                               const MomentFunctional& target, const MomentFunctional& outcome, double level = 0.95);

/// Two-sided standard normal quantile for a confidence level in (0, 1).
double normal_critical_value(double level);

struct DrConfig {
  SieveBasis basis_h;  // on X
  SieveBasis basis_f;  // primal adversary, on Z
  SieveBasis basis_q;  // on Z
  SieveBasis basis_s;  // dual adversary, on X
  MomentFunctional target = MomentFunctional::outcome();   // m~, drives the dual
  MomentFunctional outcome = MomentFunctional::outcome();  // m, drives the primal
  DpConfig primal_dp;
  DpConfig dual_dp;
  std::optional<double> fixed_lambda_primal;  // bypasses the search
  std::optional<double> fixed_lambda_dual;
  std::optional<double> ridge_inner;
  bool normalize_bases = true;  // rescale on the fit fold
  SplitPlan plan;
  double level = 0.95;
};

struct DrOutcome {
  FunctionalEstimate estimate;
  FittedFunction h;
  FittedFunction q;
  FitResult primal_fit;
  FitResult dual_fit;
  std::optional<DpOutcome> primal_dp;
  std::optional<DpOutcome> dual_dp;
  std::vector<Eigen::Index> fit_rows;
  std::vector<Eigen::Index> eval_rows;
};

DrOutcome adaptive_dr_pipeline(const Dataset& data, const DrConfig& config);

struct DgpSample {
  Dataset data;
  double theta0;
};

/// Draws a dataset of size n from a seed.
using DgpHandle = std::function<DgpSample(Eigen::Index n, std::uint64_t seed)>;

struct CoverageResult {
  double coverage = 0.0;
  double mean_width = 0.0;
  int hits = 0;
  int reps = 0;
  std::vector<double> theta_hat;
  std::vector<double> se;
  std::vector<double> theta0;
};

/// Repetition r uses data seed derive_seed(seed, {n, r}) and split seed derive_seed(seed, {n, r, 1}).
CoverageResult coverage_experiment(const DgpHandle& dgp, Eigen::Index n, int reps, const DrConfig& config,
                                   std::uint64_t seed, int jobs = 1);

}  // namespace dpreg
