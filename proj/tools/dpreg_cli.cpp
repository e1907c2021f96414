// dpreg_cli: generate | fit | dp | experiment | rates | report
//
// Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "dpreg/dgp.hpp"
#include "dpreg/discrepancy.hpp"
#include "dpreg/dr_functional.hpp"
#include "dpreg/error.hpp"
#include "dpreg/harness.hpp"
#include "dpreg/io.hpp"

using namespace dpreg;

namespace {

struct DataDesign {
  SieveBasis basis_x;
  SieveBasis basis_z;
  MomentFunctional target;
};

DataDesign design_for(const std::string& dgp, const std::string& params_path, int basis_size) {
  Json params = params_path.empty() ? Json::object() : read_json_file(params_path);
  // Accept the sidecar written by `generate` as well as a bare parameter object.
  if (params.contains("dgp_params")) {
    if (params.contains("dgp") && params["dgp"].get<std::string>() != dgp)
      throw std::invalid_argument(params_path + " was generated for dgp '" + params["dgp"].get<std::string>() + "'");
    params = Json(params["dgp_params"]);
  }
  if (parse_dgp_kind(dgp) == DgpKind::ProxyNc) {
    const ProxyNcParams p = proxy_nc_params_from_json(params);
    return {proxy_nc_basis_x(p), proxy_nc_basis_z(p), MomentFunctional::ate(kProxyTreatmentCol)};
  }
  const NpivParams p = npiv_params_from_json(params);
  return {SieveBasis::trigonometric(1, basis_size), SieveBasis::trigonometric(1, basis_size), npiv_target_moment(p)};
}

std::unique_ptr<QuadraticEstimator> make_estimator(const std::string& kind, const Dataset& data, const SieveBasis& bx,
                                                   const SieveBasis& bz, double ridge_stage1) {
  if (parse_estimator_kind(kind) == EstimatorKind::Rdiv)
    return std::make_unique<RdivEstimator>(data, rdiv_stage1(data, bx, bz, ridge_stage1));
  return std::make_unique<TraeEstimator>(data, MomentFunctional::outcome(), bx, bz, Side::X);
}

void print_path(const DpOutcome& o) {
  fmt::print("{:>9}  {:>14}  {:>14}  {:>14}  {:>5}\n", "iteration", "lambda", "L_n", "delta", "stop?");
  for (std::size_t j = 0; j < o.path.size(); ++j) {
    const auto& e = o.path.entries[j];
    fmt::print("{:>9}  {:>14.8g}  {:>14.8g}  {:>14.8g}  {:>5}\n", j, e.lambda, e.fit.empirical_loss, o.delta,
               e.fit.empirical_loss <= o.delta ? "yes" : "no");
  }
  fmt::print("lambda_dp = {}  iterations = {}  converged = {}  bracket_ok = {}\n", o.lambda_dp, o.iterations,
             o.converged, o.bracket_ok);
  for (const auto& w : o.warnings) fmt::print(stderr, "warning: {}\n", w);
}

DpConfig dp_config(const std::string& schedule, double cd, double lambda0, double rho, int max_iters) {
  DpConfig cfg;
  cfg.schedule = {parse_schedule_kind(schedule), cd};
  cfg.lambda0 = lambda0;
  cfg.rho = rho;
  cfg.max_iters = max_iters;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tikhonov regularization with discrepancy-principle parameter selection"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Draw a synthetic dataset (CSV) and its parameter file");
  std::string gen_dgp = "proxy_nc", gen_params, gen_out;
  Eigen::Index gen_n = 1000;
  std::uint64_t gen_seed = 0;
  bool gen_latents = false;
  gen->add_option("--dgp", gen_dgp, "proxy_nc or npiv")->capture_default_str();
  gen->add_option("--config", gen_params, "JSON file with dgp_params");
  gen->add_option("--n", gen_n, "Sample size")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Data seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV path (params go to <out>.params.json)")->required();
  gen->add_flag("--latents", gen_latents, "Append latent columns");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit one estimator at a given lambda");
  std::string fit_data, fit_dgp = "proxy_nc", fit_params, fit_est = "trae", fit_out;
  double fit_lambda = 0.0, fit_ridge1 = 1e-6;
  int fit_k = 5;
  fit->add_option("--data", fit_data, "Dataset CSV")->required();
  fit->add_option("--dgp", fit_dgp, "Design that fixes bases and target moment")->capture_default_str();
  fit->add_option("--config", fit_params, "JSON file with dgp_params");
  fit->add_option("--estimator", fit_est, "rdiv or trae")->capture_default_str();
  fit->add_option("--lambda", fit_lambda, "Regularization weight")->required();
  fit->add_option("--ridge-stage1", fit_ridge1, "Stage-1 ridge (rdiv)")->capture_default_str();
  fit->add_option("--basis-size", fit_k, "Trigonometric basis size (npiv)")->capture_default_str();
  fit->add_option("--out", fit_out, "Write the fit record here instead of stdout");

  // dp
  auto* dp = app.add_subcommand("dp", "Run the discrepancy-principle search and print its path");
  std::string dp_config_path, dp_data, dp_dgp = "proxy_nc", dp_params, dp_est = "trae", dp_schedule;
  double dp_cd = 0.0, dp_lambda0 = 2.0, dp_rho = 0.5, dp_ridge1 = 1e-6;
  int dp_iters = 20, dp_k = 5;
  std::uint64_t dp_seed = 0;
  dp->add_option("--config", dp_config_path, "Spectral fixture JSON (problem, observation)");
  dp->add_option("--data", dp_data, "Dataset CSV");
  dp->add_option("--dgp", dp_dgp, "Design for --data")->capture_default_str();
  dp->add_option("--params", dp_params, "JSON file with dgp_params");
  dp->add_option("--estimator", dp_est, "rdiv, trae or dr")->capture_default_str();
  dp->add_option("--schedule", dp_schedule, "rdiv, trae or fixed");
  dp->add_option("--cd", dp_cd, "Noise multiplier c_d");
  dp->add_option("--lambda0", dp_lambda0, "Initial lambda")->capture_default_str();
  dp->add_option("--rho", dp_rho, "Shrink factor")->capture_default_str();
  dp->add_option("--max-iters", dp_iters, "Iteration cap")->capture_default_str();
  dp->add_option("--ridge-stage1", dp_ridge1, "Stage-1 ridge (rdiv)")->capture_default_str();
  dp->add_option("--basis-size", dp_k, "Trigonometric basis size (npiv)")->capture_default_str();
  dp->add_option("--seed", dp_seed, "Split seed (dr)")->capture_default_str();

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run a Monte Carlo experiment from a spec file");
  std::string exp_config, exp_out;
  std::optional<std::uint64_t> exp_seed;
  int exp_jobs = 1;
  exp->add_option("--config", exp_config, "Experiment spec JSON")->required();
  exp->add_option("--seed", exp_seed, "Override the spec seed");
  exp->add_option("--out", exp_out, "Override the output prefix");
  exp->add_option("--jobs", exp_jobs, "Worker threads")->capture_default_str();

  // rates
  auto* rates = app.add_subcommand("rates", "Log-log rate fits");
  std::string rates_record, rates_metric = "abs_error", rates_config;
  bool rates_spectral = false;
  int rates_jobs = 1;
  rates->add_option("--record", rates_record, "Run CSV from `experiment`");
  rates->add_option("--metric", rates_metric, "abs_error, strong_sq or weak_sq")->capture_default_str();
  rates->add_flag("--spectral", rates_spectral, "Classical DP sweep on source problems");
  rates->add_option("--config", rates_config, "Sweep JSON (with --spectral)");
  rates->add_option("--jobs", rates_jobs, "Worker threads")->capture_default_str();

  // report
  auto* rep = app.add_subcommand("report", "Summarize a run CSV");
  std::string rep_record;
  bool rep_csv = false;
  rep->add_option("--record", rep_record, "Run CSV from `experiment`")->required();
  rep->add_flag("--csv", rep_csv, "Emit table-ready CSV instead of text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) {
      const Json params_json = gen_params.empty() ? Json::object() : read_json_file(gen_params);
      Json params_out;
      Dataset data;
      double theta0;
      if (parse_dgp_kind(gen_dgp) == DgpKind::ProxyNc) {
        const ProxyNcParams p = proxy_nc_params_from_json(params_json);
        ProxyNcDraw d = gen_proxy_nc(p, gen_n, gen_seed, gen_latents);
        data = std::move(d.data);
        theta0 = d.theta0;
        params_out = to_json(p);
      } else {
        const NpivParams p = npiv_params_from_json(params_json);
        NpivDraw d = gen_npiv(p, gen_n, gen_seed, gen_latents);
        data = std::move(d.data);
        theta0 = d.theta0;
        params_out = to_json(p);
      }
      write_dataset_csv(data, gen_out);
      write_text_file(gen_out + ".params.json",
                      Json{{"dgp", gen_dgp}, {"dgp_params", params_out}, {"n", gen_n}, {"seed", gen_seed}, {"theta0", theta0}}
                              .dump(2) +
                          "\n");
      fmt::print("wrote {} records to {} (theta0 = {})\n", data.size(), gen_out, theta0);
      return 0;
    }

    if (*fit) {
      const Dataset data = read_dataset_csv(fit_data);
      const DataDesign d = design_for(fit_dgp, fit_params, fit_k);
      const SieveBasis bx = d.basis_x.normalized(data.x), bz = d.basis_z.normalized(data.z);
      const auto est = make_estimator(fit_est, data, bx, bz, fit_ridge1);
      const FitResult r = est->fit(fit_lambda);
      Json out = to_json(r);
      out["estimator"] = fit_est;
      out["theta_plugin"] = d.target.evaluate_function(data, bx, Side::X, r.coeffs).mean();
      const std::string text = out.dump(2) + "\n";
      if (fit_out.empty())
        fmt::print("{}", text);
      else
        write_text_file(fit_out, text);
      return 0;
    }

    if (*dp) {
      if (dp_config_path.empty() == dp_data.empty())
        throw std::invalid_argument("dp: give exactly one of --config (spectral fixture) or --data");
      if (!dp_config_path.empty()) {
        const Json fx = read_json_file(dp_config_path);
        if (!fx.contains("problem") || !fx.contains("observation"))
          throw std::invalid_argument("dp --config: fixture needs keys 'problem' and 'observation'");
        auto problem = spectral_problem_from_json(fx["problem"]);
        const Json& ob = fx["observation"];
        if (!ob.contains("r_coeffs") || !ob.contains("delta"))
          throw std::invalid_argument("dp --config: observation needs keys 'r_coeffs' and 'delta'");
        const double delta = ob["delta"].get<double>();
        spectral::NoisyObservation<double> obs(vector_from_json(ob["r_coeffs"], "r_coeffs"), delta, problem);
        const DpConfig cfg = dp_config("fixed", delta, dp_lambda0, dp_rho, dp_iters);
        const SpectralEstimator est(std::move(problem), std::move(obs));
        print_path(run_dp(est, cfg, delta));
        return 0;
      }
      if (dp_schedule.empty()) throw std::invalid_argument("dp: --schedule is required with --data");
      if (!(dp_cd > 0.0)) throw std::invalid_argument("dp: --cd must be positive");
      const DpConfig cfg = dp_config(dp_schedule, dp_cd, dp_lambda0, dp_rho, dp_iters);
      const Dataset data = read_dataset_csv(dp_data);
      const DataDesign d = design_for(dp_dgp, dp_params, dp_k);
      if (dp_est == "dr") {
        const DrConfig dr{.basis_h = d.basis_x, .basis_f = d.basis_z, .basis_q = d.basis_z, .basis_s = d.basis_x,
                          .target = d.target, .outcome = MomentFunctional::outcome(), .primal_dp = cfg, .dual_dp = cfg,
                          .fixed_lambda_primal = std::nullopt, .fixed_lambda_dual = std::nullopt,
                          .ridge_inner = std::nullopt, .normalize_bases = true, .plan = SplitPlan{dp_seed, 0.5},
                          .level = 0.95};
        const DrOutcome o = adaptive_dr_pipeline(data, dr);
        fmt::print("primal (h on X)\n");
        print_path(*o.primal_dp);
        fmt::print("\ndual (q on Z)\n");
        print_path(*o.dual_dp);
        const auto& e = o.estimate;
        fmt::print("\ntheta_hat = {:.6f}  se = {:.6f}  {:.0f}% CI = [{:.6f}, {:.6f}]  n_eval = {}\n", e.theta_hat, e.se,
                   100 * e.level, e.ci_low, e.ci_high, e.n_eval);
        fmt::print("lambda_dp primal = {} ({} iterations), dual = {} ({} iterations)\n", o.primal_dp->lambda_dp,
                   o.primal_dp->iterations, o.dual_dp->lambda_dp, o.dual_dp->iterations);
        return 0;
      }
      const SieveBasis bx = d.basis_x.normalized(data.x), bz = d.basis_z.normalized(data.z);
      const auto est = make_estimator(dp_est, data, bx, bz, dp_ridge1);
      print_path(run_dp(*est, cfg));
      return 0;
    }

    if (*exp) {
      ExperimentSpec spec = ExperimentSpec::from_json(read_json_file(exp_config));
      if (exp_seed) spec.seed = *exp_seed;
      if (!exp_out.empty()) spec.output = exp_out;
      if (spec.output.empty()) throw std::invalid_argument("config: key 'output' is empty and --out not given");
      const RunRecord record = run_experiment(spec, exp_jobs);
      write_text_file(spec.output + ".csv", format_run_csv(record.rows));
      write_text_file(spec.output + ".summary.json", summary_json(record).dump(2) + "\n");
      fmt::print("{}", format_report(aggregate(record.rows)));
      fmt::print("wrote {}.csv and {}.summary.json ({} rows, spec hash {:016x})\n", spec.output, spec.output,
                 record.rows.size(), record.spec_hash);
      return 0;
    }

    if (*rates) {
      if (rates_spectral) {
        const SpectralSweepSpec sweep =
            rates_config.empty() ? SpectralSweepSpec::defaults() : SpectralSweepSpec::from_json(read_json_file(rates_config));
        const auto rows = spectral_sweep(sweep, rates_jobs);
        fmt::print("{:>6}  {:>18}  {:>18}  {:>18}  {:>18}\n", "beta", "strong^2~delta^2", "strong^2~delta", "weak^2~delta",
                   "lambda~delta");
        for (const auto& r : spectral_rates(rows))
          fmt::print("{:>6}  {:>9.4f} +- {:<6.4f}  {:>9.4f} +- {:<6.4f}  {:>9.4f} +- {:<6.4f}  {:>9.4f} +- {:<6.4f}\n", r.beta,
                     r.strong_vs_delta_sq.slope, r.strong_vs_delta_sq.slope_se, r.strong_vs_delta.slope,
                     r.strong_vs_delta.slope_se, r.weak_vs_delta.slope, r.weak_vs_delta.slope_se, r.lambda_vs_delta.slope,
                     r.lambda_vs_delta.slope_se);
        return 0;
      }
      if (rates_record.empty()) throw std::invalid_argument("rates: give --record or --spectral");
      const auto rows = parse_run_csv(read_text_file(rates_record));
      std::vector<std::string> strategies;
      for (const auto& a : aggregate(rows))
        if (std::find(strategies.begin(), strategies.end(), a.strategy) == strategies.end()) strategies.push_back(a.strategy);
      fmt::print("{:<14}  {:>10}  {:>10}  {:>10}  {:>6}\n", "strategy", "slope", "se", "intercept", "points");
      for (const auto& s : strategies) {
        const RateFit f = fit_rate(rows, s, rates_metric);
        fmt::print("{:<14}  {:>10.4f}  {:>10.4f}  {:>10.4f}  {:>6}\n", s, f.slope, f.slope_se, f.intercept, f.points);
      }
      return 0;
    }

    if (*rep) {
      const auto aggs = aggregate(parse_run_csv(read_text_file(rep_record)));
      fmt::print("{}", rep_csv ? format_aggregate_csv(aggs) : format_report(aggs));
      return 0;
    }
  } catch (const NumericalError& e) {
    fmt::print(stderr, "numerical error: {}\n", e.what());
    return 2;
  } catch (const std::domain_error& e) {
    fmt::print(stderr, "numerical error: {}\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const Json::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 1;
}
