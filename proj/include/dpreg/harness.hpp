#pragma once

// Monte Carlo runner: cells (n, strategy, rep) are independent; results are ordered by cell key.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpreg/dgp.hpp"
#include "dpreg/discrepancy.hpp"
#include "dpreg/io.hpp"
#include "dpreg/spectral.hpp"

namespace dpreg {

enum class DgpKind { ProxyNc, Npiv };
enum class PipelineKind { Rdiv, Trae, Dr };

DgpKind parse_dgp_kind(std::string_view name);
PipelineKind parse_pipeline_kind(std::string_view name);
std::string to_string(DgpKind kind);
std::string to_string(PipelineKind kind);

ProxyNcParams proxy_nc_params_from_json(const Json& j);
Json to_json(const ProxyNcParams& params);
NpivParams npiv_params_from_json(const Json& j);
Json to_json(const NpivParams& params);

struct StrategySpec {
  bool adaptive = true;
  DpConfig dp;          // adaptive
  double lambda = 0.0;  // fixed

  /// "dp" or "fixed_<lambda>".
  std::string label() const;
};

struct ExperimentSpec {
  DgpKind dgp = DgpKind::ProxyNc;
  Json dgp_params = Json::object();
  PipelineKind estimator = PipelineKind::Trae;
  std::vector<StrategySpec> strategies;
  std::vector<Eigen::Index> sizes;
  int repetitions = 50;
  std::uint64_t seed = 0;
  std::string output;  // path prefix: <output>.csv and <output>.summary.json
  double ridge_stage1 = 1e-6;
  std::optional<double> ridge_inner;
  double fit_fraction = 0.5;
  double level = 0.95;
  int basis_size = 5;  // trigonometric K for npiv

  /// Throws std::invalid_argument naming the offending key (unknown keys included).
  static ExperimentSpec from_json(const Json& j);
  Json to_json() const;
  void validate() const;
  /// FNV-1a of the canonical JSON dump.
  std::uint64_t hash() const;
};

struct RunRow {
  Eigen::Index n = 0;
  std::string strategy;
  int rep = 0;
  double abs_error = 0.0;
  double strong_sq = 0.0;  // NaN when the DGP has no exact h0
  double weak_sq = 0.0;
  double lambda_dp = 0.0;
  int iters = 0;
  double wall_ms = 0.0;
  double theta_hat = 0.0;
  std::string error;  // nonempty for a failed cell
};

struct RunRecord {
  std::uint64_t spec_hash = 0;
  Json spec;
  std::vector<RunRow> rows;
};

struct Aggregate {
  Eigen::Index n = 0;
  std::string strategy;
  int count = 0;  // successful cells
  int failures = 0;
  double abs_error_mean = 0.0, abs_error_se = 0.0, abs_error_median = 0.0;
  double strong_sq_mean = 0.0, strong_sq_se = 0.0;
  double weak_sq_mean = 0.0, weak_sq_se = 0.0;
  double lambda_dp_mean = 0.0, lambda_dp_median = 0.0, lambda_dp_min = 0.0, lambda_dp_max = 0.0;
  double iters_mean = 0.0;
};

/// Data stream derive_seed(seed, {n, rep}) is shared by all strategies; the split stream is
/// derive_seed(spec hash, {n, strategy index, rep}).
RunRecord run_experiment(const ExperimentSpec& spec, int jobs = 1);

/// Aggregates in (n, strategy) order of first appearance.
std::vector<Aggregate> aggregate(const std::vector<RunRow>& rows);

/// Columns n, strategy, rep, abs_error, strong_sq, weak_sq, lambda_dp, iters, wall_ms.
std::string format_run_csv(const std::vector<RunRow>& rows, bool include_wall = true);
std::vector<RunRow> parse_run_csv(const std::string& text);
Json summary_json(const RunRecord& record);
std::string format_report(const std::vector<Aggregate>& aggregates);
/// Table-ready aggregate CSV.
std::string format_aggregate_csv(const std::vector<Aggregate>& aggregates);

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  int points = 0;
};

/// OLS of log y on log x. Needs >= 3 points, all positive.
RateFit fit_rate(const std::vector<double>& x, const std::vector<double>& y);

/// Rate of the mean of `metric` (abs_error, strong_sq, weak_sq) against n for one strategy.
RateFit fit_rate(const std::vector<RunRow>& rows, const std::string& strategy, const std::string& metric);

/// Classical-DP sweep over source problems with d, p fixed and w0_i = i^{w0_exponent}.
struct SpectralSweepSpec {
  Eigen::Index d = 200;
  double decay_p = 1.0;
  std::vector<double> betas{0.5, 1.0, 2.0};
  std::vector<double> deltas;  // default 2^-3 .. 2^-9
  int seeds = 20;
  std::uint64_t seed = 2024;
  double w0_exponent = -0.5;
  spectral::ClassicalDpOptions<double> dp;

  static SpectralSweepSpec defaults();
  static SpectralSweepSpec from_json(const Json& j);
  Json to_json() const;
};

struct SpectralSweepRow {
  double beta = 0.0;
  double delta = 0.0;
  double strong_sq_mean = 0.0;  // means over noise seeds
  double weak_sq_mean = 0.0;
  double lambda_mean = 0.0;
  int max_grid_index = 0;
  int bracket_failures = 0;
};

std::vector<SpectralSweepRow> spectral_sweep(const SpectralSweepSpec& spec, int jobs = 1);
std::string format_sweep_csv(const std::vector<SpectralSweepRow>& rows);

struct SpectralRates {
  double beta = 0.0;
  RateFit strong_vs_delta_sq;  // log strong^2 on log delta^2
  RateFit strong_vs_delta;
  RateFit weak_vs_delta;
  RateFit lambda_vs_delta;
};

std::vector<SpectralRates> spectral_rates(const std::vector<SpectralSweepRow>& rows);

}  // namespace dpreg
