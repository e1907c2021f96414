#include "dpreg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <variant>

#include <fmt/format.h>

#include "dpreg/dr_functional.hpp"
#include "dpreg/error.hpp"
#include "dpreg/parallel.hpp"
#include "dpreg/rng.hpp"

namespace dpreg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void reject_unknown_keys(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw std::invalid_argument(fmt::format("{}: unknown key '{}'", where, key));
}

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw std::invalid_argument(fmt::format("{}: key '{}' has the wrong type", where, key));
  }
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& key) {
  if (!j.is_array()) throw std::invalid_argument("'" + key + "' must be an array of rows");
  Eigen::MatrixXd m;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Eigen::VectorXd row = vector_from_json(j[i], key);
    if (i == 0) m.resize(static_cast<Eigen::Index>(j.size()), row.size());
    if (row.size() != m.cols()) throw std::invalid_argument("'" + key + "' has ragged rows");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Names and parameter files

DgpKind parse_dgp_kind(std::string_view name) {
  if (name == "proxy_nc") return DgpKind::ProxyNc;
  if (name == "npiv") return DgpKind::Npiv;
  throw std::invalid_argument(fmt::format("dgp: unknown kind '{}' (expected proxy_nc or npiv)", name));
}

PipelineKind parse_pipeline_kind(std::string_view name) {
  if (name == "rdiv") return PipelineKind::Rdiv;
  if (name == "trae") return PipelineKind::Trae;
  if (name == "dr") return PipelineKind::Dr;
  throw std::invalid_argument(fmt::format("estimator: unknown kind '{}' (expected rdiv, trae or dr)", name));
}

std::string to_string(DgpKind kind) { return kind == DgpKind::ProxyNc ? "proxy_nc" : "npiv"; }

std::string to_string(PipelineKind kind) {
  switch (kind) {
    case PipelineKind::Rdiv: return "rdiv";
    case PipelineKind::Trae: return "trae";
    case PipelineKind::Dr: return "dr";
  }
  return "?";
}

ProxyNcParams proxy_nc_params_from_json(const Json& j) {
  static const std::set<std::string> keys{"master_seed", "d_s",     "d_q",     "d_w",     "transform", "mu0",
                                          "kappa0",      "kappa_a", "mu_s",    "kappa_s", "gamma_w",   "b_q",
                                          "c_q",         "sigma_u", "sigma_w", "sigma_q", "sigma_s2",  "sigma_y"};
  const std::string where = "dgp_params";
  reject_unknown_keys(j, keys, where);
  ProxyNcParams p = ProxyNcParams::defaults(get_or<std::uint64_t>(j, "master_seed", 0, where), get_or(j, "d_s", 15, where),
                                            get_or(j, "d_q", 15, where), get_or(j, "d_w", 1, where));
  const std::string transform = get_or<std::string>(j, "transform", "cube_root", where);
  if (transform == "cube_root")
    p.transform = Transform::CubeRoot;
  else if (transform == "identity")
    p.transform = Transform::Identity;
  else
    throw std::invalid_argument("dgp_params: key 'transform' must be cube_root or identity");
  for (auto [key, vec] : {std::pair{"mu0", &p.mu0}, {"kappa0", &p.kappa0}, {"kappa_a", &p.kappa_a}})
    if (j.contains(key)) *vec = vector_from_json(j[key], key);
  for (auto [key, mat] : {std::pair{"mu_s", &p.mu_s}, {"kappa_s", &p.kappa_s}, {"gamma_w", &p.gamma_w}, {"b_q", &p.b_q},
                          {"c_q", &p.c_q}, {"sigma_u", &p.sigma_u}, {"sigma_w", &p.sigma_w}, {"sigma_q", &p.sigma_q}})
    if (j.contains(key)) *mat = matrix_from_json(j[key], key);
  p.sigma_s2 = get_or(j, "sigma_s2", p.sigma_s2, where);
  p.sigma_y = get_or(j, "sigma_y", p.sigma_y, where);
  p.validate();
  return p;
}

Json to_json(const ProxyNcParams& p) {
  return Json{{"master_seed", p.master_seed},
              {"d_s", p.d_s},
              {"d_q", p.d_q},
              {"d_w", p.d_w},
              {"transform", p.transform == Transform::CubeRoot ? "cube_root" : "identity"},
              {"mu0", vector_to_json(p.mu0)},
              {"kappa0", vector_to_json(p.kappa0)},
              {"kappa_a", vector_to_json(p.kappa_a)},
              {"mu_s", matrix_to_json(p.mu_s)},
              {"kappa_s", matrix_to_json(p.kappa_s)},
              {"gamma_w", matrix_to_json(p.gamma_w)},
              {"b_q", matrix_to_json(p.b_q)},
              {"c_q", matrix_to_json(p.c_q)},
              {"sigma_u", matrix_to_json(p.sigma_u)},
              {"sigma_w", matrix_to_json(p.sigma_w)},
              {"sigma_q", matrix_to_json(p.sigma_q)},
              {"sigma_s2", p.sigma_s2},
              {"sigma_y", p.sigma_y}};
}

NpivParams npiv_params_from_json(const Json& j) {
  static const std::set<std::string> keys{"decay_p",  "strength",         "modes",       "h0_coeffs",
                                          "endogeneity", "noise_sd", "functional_gamma", "identity_map"};
  const std::string where = "dgp_params";
  reject_unknown_keys(j, keys, where);
  NpivParams p = NpivParams::defaults();
  p.decay_p = get_or(j, "decay_p", p.decay_p, where);
  p.strength = get_or(j, "strength", p.strength, where);
  p.modes = get_or(j, "modes", p.modes, where);
  if (j.contains("h0_coeffs")) p.h0_coeffs = vector_from_json(j["h0_coeffs"], "h0_coeffs");
  p.endogeneity = get_or(j, "endogeneity", p.endogeneity, where);
  p.noise_sd = get_or(j, "noise_sd", p.noise_sd, where);
  p.functional_gamma = get_or(j, "functional_gamma", p.functional_gamma, where);
  p.identity_map = get_or(j, "identity_map", p.identity_map, where);
  p.validate();
  return p;
}

Json to_json(const NpivParams& p) {
  return Json{{"decay_p", p.decay_p},
              {"strength", p.strength},
              {"modes", p.modes},
              {"h0_coeffs", vector_to_json(p.h0_coeffs)},
              {"endogeneity", p.endogeneity},
              {"noise_sd", p.noise_sd},
              {"functional_gamma", p.functional_gamma},
              {"identity_map", p.identity_map}};
}

// ---------------------------------------------------------------------------------------------
// Spec

std::string StrategySpec::label() const { return adaptive ? "dp" : "fixed_" + format_double(lambda); }

static StrategySpec strategy_from_json(const Json& j, std::size_t index) {
  const std::string where = fmt::format("strategies[{}]", index);
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  const std::string kind = get_or<std::string>(j, "kind", "", where);
  StrategySpec s;
  if (kind == "dp") {
    reject_unknown_keys(j, {"kind", "schedule", "cd", "lambda0", "rho", "max_iters"}, where);
    s.adaptive = true;
    if (!j.contains("schedule")) throw std::invalid_argument(where + ": missing key 'schedule'");
    if (!j.contains("cd")) throw std::invalid_argument(where + ": missing key 'cd'");
    try {
      s.dp.schedule.kind = parse_schedule_kind(get_or<std::string>(j, "schedule", "", where));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ".schedule: " + e.what());
    }
    s.dp.schedule.c_d = get_or(j, "cd", 1.0, where);
    s.dp.lambda0 = get_or(j, "lambda0", s.dp.lambda0, where);
    s.dp.rho = get_or(j, "rho", s.dp.rho, where);
    s.dp.max_iters = get_or(j, "max_iters", s.dp.max_iters, where);
    try {
      s.dp.validate();
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
  } else if (kind == "fixed") {
    reject_unknown_keys(j, {"kind", "lambda"}, where);
    s.adaptive = false;
    if (!j.contains("lambda")) throw std::invalid_argument(where + ": missing key 'lambda'");
    s.lambda = get_or(j, "lambda", 0.0, where);
    if (!(s.lambda >= 0.0) || std::isinf(s.lambda)) throw std::invalid_argument(where + ".lambda: must be finite and >= 0");
  } else {
    throw std::invalid_argument(where + ".kind: expected 'dp' or 'fixed'");
  }
  return s;
}

static Json strategy_to_json(const StrategySpec& s) {
  if (!s.adaptive) return Json{{"kind", "fixed"}, {"lambda", s.lambda}};
  return Json{{"kind", "dp"},
              {"schedule", to_string(s.dp.schedule.kind)},
              {"cd", s.dp.schedule.c_d},
              {"lambda0", s.dp.lambda0},
              {"rho", s.dp.rho},
              {"max_iters", s.dp.max_iters}};
}

ExperimentSpec ExperimentSpec::from_json(const Json& j) {
  static const std::set<std::string> keys{"dgp",   "dgp_params",   "estimator",   "strategies",   "sizes",
                                          "repetitions", "seed", "output", "ridge_stage1", "ridge_inner",
                                          "fit_fraction", "level", "basis_size"};
  const std::string where = "config";
  reject_unknown_keys(j, keys, where);
  ExperimentSpec s;
  for (const char* k : {"dgp", "estimator", "strategies", "sizes"})
    if (!j.contains(k)) throw std::invalid_argument(fmt::format("config: missing key '{}'", k));
  s.dgp = parse_dgp_kind(get_or<std::string>(j, "dgp", "", where));
  s.dgp_params = j.contains("dgp_params") ? j["dgp_params"] : Json::object();
  s.estimator = parse_pipeline_kind(get_or<std::string>(j, "estimator", "", where));
  if (!j["strategies"].is_array()) throw std::invalid_argument("config: key 'strategies' must be an array");
  for (std::size_t i = 0; i < j["strategies"].size(); ++i) s.strategies.push_back(strategy_from_json(j["strategies"][i], i));
  s.sizes = get_or<std::vector<Eigen::Index>>(j, "sizes", {}, where);
  s.repetitions = get_or(j, "repetitions", s.repetitions, where);
  s.seed = get_or(j, "seed", s.seed, where);
  s.output = get_or<std::string>(j, "output", "", where);
  s.ridge_stage1 = get_or(j, "ridge_stage1", s.ridge_stage1, where);
  if (j.contains("ridge_inner") && !j["ridge_inner"].is_null()) s.ridge_inner = get_or(j, "ridge_inner", 0.0, where);
  s.fit_fraction = get_or(j, "fit_fraction", s.fit_fraction, where);
  s.level = get_or(j, "level", s.level, where);
  s.basis_size = get_or(j, "basis_size", s.basis_size, where);
  s.validate();
  return s;
}

void ExperimentSpec::validate() const {
  if (strategies.empty()) throw std::invalid_argument("config: key 'strategies' must be nonempty");
  if (sizes.empty()) throw std::invalid_argument("config: key 'sizes' must be nonempty");
  for (auto n : sizes)
    if (n < 8) throw std::invalid_argument(fmt::format("config: key 'sizes' entry {} is below 8", n));
  if (repetitions < 1) throw std::invalid_argument("config: key 'repetitions' must be >= 1");
  if (!(ridge_stage1 >= 0.0)) throw std::invalid_argument("config: key 'ridge_stage1' must be >= 0");
  if (ridge_inner && !(*ridge_inner >= 0.0)) throw std::invalid_argument("config: key 'ridge_inner' must be >= 0");
  if (!(fit_fraction > 0.0 && fit_fraction < 1.0)) throw std::invalid_argument("config: key 'fit_fraction' must lie in (0, 1)");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("config: key 'level' must lie in (0, 1)");
  if (basis_size < 1) throw std::invalid_argument("config: key 'basis_size' must be >= 1");
  std::set<std::string> labels;
  for (const auto& st : strategies)
    if (!labels.insert(st.label()).second)
      throw std::invalid_argument("config: duplicate strategy '" + st.label() + "'");
  if (dgp == DgpKind::ProxyNc)
    proxy_nc_params_from_json(dgp_params);
  else
    npiv_params_from_json(dgp_params);
}

Json ExperimentSpec::to_json() const {
  Json strat = Json::array();
  for (const auto& s : strategies) strat.push_back(strategy_to_json(s));
  Json j{{"dgp", to_string(dgp)},
         {"dgp_params", dgp_params},
         {"estimator", to_string(estimator)},
         {"strategies", std::move(strat)},
         {"sizes", sizes},
         {"repetitions", repetitions},
         {"seed", seed},
         {"output", output},
         {"ridge_stage1", ridge_stage1},
         {"ridge_inner", ridge_inner ? Json(*ridge_inner) : Json(nullptr)},
         {"fit_fraction", fit_fraction},
         {"level", level},
         {"basis_size", basis_size}};
  return j;
}

std::uint64_t ExperimentSpec::hash() const {
  Json j = to_json();
  j.erase("output");  // where results go does not change them
  return fnv1a(j.dump());
}

// ---------------------------------------------------------------------------------------------
// Runner

namespace {

using DgpParams = std::variant<ProxyNcParams, NpivParams>;

struct Design {
  DgpParams params;
  SieveBasis basis_x;
  SieveBasis basis_z;
  MomentFunctional target;
};

Design make_design(const ExperimentSpec& spec) {
  if (spec.dgp == DgpKind::ProxyNc) {
    ProxyNcParams p = proxy_nc_params_from_json(spec.dgp_params);
    SieveBasis bx = proxy_nc_basis_x(p), bz = proxy_nc_basis_z(p);
    return Design{std::move(p), std::move(bx), std::move(bz), MomentFunctional::ate(kProxyTreatmentCol)};
  }
  NpivParams p = npiv_params_from_json(spec.dgp_params);
  MomentFunctional target = npiv_target_moment(p);
  return Design{p, SieveBasis::trigonometric(1, spec.basis_size), SieveBasis::trigonometric(1, spec.basis_size),
                std::move(target)};
}

DgpSample draw(const Design& design, Eigen::Index n, std::uint64_t seed) {
  if (const auto* p = std::get_if<ProxyNcParams>(&design.params)) {
    ProxyNcDraw d = gen_proxy_nc(*p, n, seed);
    return {std::move(d.data), d.theta0};
  }
  NpivDraw d = gen_npiv(std::get<NpivParams>(design.params), n, seed);
  return {std::move(d.data), d.theta0};
}

struct Selected {
  FitResult fit;
  double lambda;
  int iters;
};

Selected select(const QuadraticEstimator& est, const StrategySpec& strategy) {
  if (!strategy.adaptive) return {est.fit(strategy.lambda), strategy.lambda, 1};
  DpOutcome o = run_dp(est, strategy.dp);
  return {std::move(o.fit), o.lambda_dp, o.iterations};
}

RunRow run_cell(const ExperimentSpec& spec, const Design& design, std::uint64_t spec_hash, std::size_t size_index,
                std::size_t strategy_index, int rep) {
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::Index n = spec.sizes[size_index];
  const StrategySpec& strategy = spec.strategies[strategy_index];
  RunRow row;
  row.n = n;
  row.strategy = strategy.label();
  row.rep = rep;
  row.strong_sq = row.weak_sq = kNaN;
  try {
    const auto un = static_cast<std::uint64_t>(n);
    const auto urep = static_cast<std::uint64_t>(rep);
    const DgpSample sample = draw(design, n, derive_seed(spec.seed, {un, urep}));
    const SplitPlan plan{derive_seed(spec_hash, {un, strategy_index, urep}), spec.fit_fraction};
    const MomentFunctional outcome = MomentFunctional::outcome();

    Eigen::VectorXd h_coeffs;
    std::optional<SieveBasis> h_basis;
    if (spec.estimator == PipelineKind::Dr) {
      DrConfig cfg{.basis_h = design.basis_x,
                   .basis_f = design.basis_z,
                   .basis_q = design.basis_z,
                   .basis_s = design.basis_x,
                   .target = design.target,
                   .outcome = outcome,
                   .primal_dp = strategy.dp,
                   .dual_dp = strategy.dp,
                   .fixed_lambda_primal = std::nullopt,
                   .fixed_lambda_dual = std::nullopt,
                   .ridge_inner = spec.ridge_inner,
                   .normalize_bases = true,
                   .plan = plan,
                   .level = spec.level};
      if (!strategy.adaptive) cfg.fixed_lambda_primal = cfg.fixed_lambda_dual = strategy.lambda;
      const DrOutcome o = adaptive_dr_pipeline(sample.data, cfg);
      row.theta_hat = o.estimate.theta_hat;
      row.lambda_dp = o.primal_dp ? o.primal_dp->lambda_dp : strategy.lambda;
      row.iters = o.primal_dp ? o.primal_dp->iterations : 1;
      h_coeffs = o.h.coeffs;
      h_basis = o.h.basis;
    } else {
      const Split parts = split(sample.data, plan);
      const SieveBasis bx = design.basis_x.normalized(parts.fit.x);
      const SieveBasis bz = design.basis_z.normalized(parts.fit.z);
      std::unique_ptr<QuadraticEstimator> est;
      if (spec.estimator == PipelineKind::Rdiv)
        est = std::make_unique<RdivEstimator>(parts.fit, rdiv_stage1(parts.fit, bx, bz, spec.ridge_stage1));
      else
        est = std::make_unique<TraeEstimator>(parts.fit, outcome, bx, bz, Side::X, spec.ridge_inner);
      const Selected sel = select(*est, strategy);
      row.theta_hat = design.target.evaluate_function(parts.eval, bx, Side::X, sel.fit.coeffs).mean();
      row.lambda_dp = sel.lambda;
      row.iters = sel.iters;
      h_coeffs = sel.fit.coeffs;
      h_basis = bx;
    }
    row.abs_error = std::abs(row.theta_hat - sample.theta0);
    if (const auto* np = std::get_if<NpivParams>(&design.params)) {
      const NpivMetrics m = npiv_metrics(*np, *h_basis, h_coeffs);
      row.strong_sq = m.strong_sq;
      row.weak_sq = m.weak_sq;
    }
  } catch (const std::exception& e) {
    row.error = e.what();
    row.abs_error = row.theta_hat = row.lambda_dp = kNaN;
    row.iters = 0;
  }
  row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

}  // namespace

RunRecord run_experiment(const ExperimentSpec& spec, int jobs) {
  spec.validate();
  const Design design = make_design(spec);
  RunRecord record;
  record.spec_hash = spec.hash();
  record.spec = spec.to_json();
  const std::size_t n_sizes = spec.sizes.size(), n_strat = spec.strategies.size();
  const auto reps = static_cast<std::size_t>(spec.repetitions);
  record.rows = parallel_map<RunRow>(n_sizes * n_strat * reps, jobs, [&](std::size_t cell) {
    const std::size_t rep = cell % reps;
    const std::size_t s = (cell / reps) % n_strat;
    const std::size_t i = cell / (reps * n_strat);
    return run_cell(spec, design, record.spec_hash, i, s, static_cast<int>(rep));
  });
  return record;
}

// ---------------------------------------------------------------------------------------------
// Records

namespace {

struct Moments {
  double mean = 0.0, se = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return {kNaN, kNaN};
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return m;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::vector<Aggregate> aggregate(const std::vector<RunRow>& rows) {
  std::vector<std::pair<Eigen::Index, std::string>> keys;
  std::map<std::pair<Eigen::Index, std::string>, std::vector<const RunRow*>> groups;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.n, r.strategy);
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<Aggregate> out;
  for (const auto& key : keys) {
    Aggregate a;
    a.n = key.first;
    a.strategy = key.second;
    std::vector<double> err, strong, weak, lam, iters;
    for (const RunRow* r : groups[key]) {
      if (!r->error.empty()) {
        ++a.failures;
        continue;
      }
      err.push_back(r->abs_error);
      if (!std::isnan(r->strong_sq)) strong.push_back(r->strong_sq);
      if (!std::isnan(r->weak_sq)) weak.push_back(r->weak_sq);
      lam.push_back(r->lambda_dp);
      iters.push_back(r->iters);
    }
    a.count = static_cast<int>(err.size());
    const Moments e = moments(err), s = moments(strong), w = moments(weak);
    a.abs_error_mean = e.mean;
    a.abs_error_se = e.se;
    a.abs_error_median = median(err);
    a.strong_sq_mean = s.mean;
    a.strong_sq_se = s.se;
    a.weak_sq_mean = w.mean;
    a.weak_sq_se = w.se;
    a.lambda_dp_mean = moments(lam).mean;
    a.lambda_dp_median = median(lam);
    a.lambda_dp_min = lam.empty() ? kNaN : *std::min_element(lam.begin(), lam.end());
    a.lambda_dp_max = lam.empty() ? kNaN : *std::max_element(lam.begin(), lam.end());
    a.iters_mean = moments(iters).mean;
    out.push_back(a);
  }
  return out;
}

std::string format_run_csv(const std::vector<RunRow>& rows, bool include_wall) {
  fmt::memory_buffer buf;
  auto out = std::back_inserter(buf);
  fmt::format_to(out, "n,strategy,rep,abs_error,strong_sq,weak_sq,lambda_dp,iters{}\n", include_wall ? ",wall_ms" : "");
  for (const auto& r : rows) {
    fmt::format_to(out, "{},{},{},{},{},{},{},{}", r.n, r.strategy, r.rep, format_double(r.abs_error),
                   format_double(r.strong_sq), format_double(r.weak_sq), format_double(r.lambda_dp), r.iters);
    if (include_wall) fmt::format_to(out, ",{:.3f}", r.wall_ms);
    fmt::format_to(out, "\n");
  }
  return fmt::to_string(buf);
}

std::vector<RunRow> parse_run_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("n,strategy,rep,abs_error,strong_sq,weak_sq,lambda_dp,iters", 0) != 0)
    throw ParseError("run CSV: unexpected header");
  const bool has_wall = line.find("wall_ms") != std::string::npos;
  std::vector<RunRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != (has_wall ? 9u : 8u)) throw ParseError(fmt::format("run CSV row {}: wrong number of cells", line_no));
    auto num = [&](std::size_t c) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(cells[c], &pos);
        if (pos != cells[c].size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw ParseError(fmt::format("run CSV row {}, column {}: non-numeric cell '{}'", line_no, c + 1, cells[c]));
      }
    };
    RunRow r;
    r.n = static_cast<Eigen::Index>(num(0));
    r.strategy = cells[1];
    r.rep = static_cast<int>(num(2));
    r.abs_error = num(3);
    r.strong_sq = num(4);
    r.weak_sq = num(5);
    r.lambda_dp = num(6);
    r.iters = static_cast<int>(num(7));
    r.wall_ms = has_wall ? num(8) : 0.0;
    if (std::isnan(r.abs_error)) r.error = "failed";
    rows.push_back(std::move(r));
  }
  return rows;
}

static Json aggregate_json(const Aggregate& a) {
  auto num = [](double v) { return std::isnan(v) ? Json(nullptr) : Json(v); };
  return Json{{"n", a.n},
              {"strategy", a.strategy},
              {"count", a.count},
              {"failures", a.failures},
              {"abs_error_mean", num(a.abs_error_mean)},
              {"abs_error_se", num(a.abs_error_se)},
              {"abs_error_median", num(a.abs_error_median)},
              {"strong_sq_mean", num(a.strong_sq_mean)},
              {"strong_sq_se", num(a.strong_sq_se)},
              {"weak_sq_mean", num(a.weak_sq_mean)},
              {"weak_sq_se", num(a.weak_sq_se)},
              {"lambda_dp_mean", num(a.lambda_dp_mean)},
              {"lambda_dp_median", num(a.lambda_dp_median)},
              {"lambda_dp_min", num(a.lambda_dp_min)},
              {"lambda_dp_max", num(a.lambda_dp_max)},
              {"iters_mean", num(a.iters_mean)}};
}

Json summary_json(const RunRecord& record) {
  Json failures = Json::array();
  for (const auto& r : record.rows)
    if (!r.error.empty()) failures.push_back(Json{{"n", r.n}, {"strategy", r.strategy}, {"rep", r.rep}, {"error", r.error}});
  Json aggs = Json::array();
  for (const auto& a : aggregate(record.rows)) aggs.push_back(aggregate_json(a));
  return Json{{"spec_hash", fmt::format("{:016x}", record.spec_hash)},
              {"spec", record.spec},
              {"rows", record.rows.size()},
              {"failures", std::move(failures)},
              {"aggregates", std::move(aggs)}};
}

std::string format_report(const std::vector<Aggregate>& aggregates) {
  fmt::memory_buffer buf;
  auto out = std::back_inserter(buf);
  fmt::format_to(out, "{:>6} {:<14} {:>5} {:>12} {:>10} {:>12} {:>12} {:>12} {:>10} {:>10} {:>10} {:>6}\n", "n",
                 "strategy", "reps", "abs_err", "se", "median", "strong_sq", "weak_sq", "lam_med", "lam_min", "lam_max",
                 "iters");
  for (const auto& a : aggregates) {
    fmt::format_to(out, "{:>6} {:<14} {:>5} {:>12.5g} {:>10.3g} {:>12.5g} {:>12.5g} {:>12.5g} {:>10.4g} {:>10.4g} {:>10.4g} {:>6.2f}",
                   a.n, a.strategy, a.count, a.abs_error_mean, a.abs_error_se, a.abs_error_median, a.strong_sq_mean,
                   a.weak_sq_mean, a.lambda_dp_median, a.lambda_dp_min, a.lambda_dp_max, a.iters_mean);
    if (a.failures) fmt::format_to(out, "  ({} failed)", a.failures);
    fmt::format_to(out, "\n");
  }
  return fmt::to_string(buf);
}

std::string format_aggregate_csv(const std::vector<Aggregate>& aggregates) {
  fmt::memory_buffer buf;
  auto out = std::back_inserter(buf);
  fmt::format_to(out,
                 "n,strategy,count,failures,abs_error_mean,abs_error_se,abs_error_median,strong_sq_mean,strong_sq_se,"
                 "weak_sq_mean,weak_sq_se,lambda_dp_mean,lambda_dp_median,lambda_dp_min,lambda_dp_max,iters_mean\n");
  for (const auto& a : aggregates)
    fmt::format_to(out, "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", a.n, a.strategy, a.count, a.failures,
                   format_double(a.abs_error_mean), format_double(a.abs_error_se), format_double(a.abs_error_median),
                   format_double(a.strong_sq_mean), format_double(a.strong_sq_se), format_double(a.weak_sq_mean),
                   format_double(a.weak_sq_se), format_double(a.lambda_dp_mean), format_double(a.lambda_dp_median),
                   format_double(a.lambda_dp_min), format_double(a.lambda_dp_max), format_double(a.iters_mean));
  return fmt::to_string(buf);
}

// ---------------------------------------------------------------------------------------------
// Rates

RateFit fit_rate(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_rate: x and y differ in length");
  if (x.size() < 3) throw std::invalid_argument("fit_rate: need at least 3 points");
  const auto m = static_cast<double>(x.size());
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0))
      throw std::domain_error(fmt::format("fit_rate: nonpositive value at point {} (x = {}, y = {})", i, x[i], y[i]));
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw std::domain_error("fit_rate: x values are all equal");
  RateFit r;
  r.points = static_cast<int>(x.size());
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double e = ly[i] - r.intercept - r.slope * lx[i];
    rss += e * e;
  }
  r.slope_se = std::sqrt(rss / (m - 2.0) / sxx);
  return r;
}

RateFit fit_rate(const std::vector<RunRow>& rows, const std::string& strategy, const std::string& metric) {
  if (metric != "abs_error" && metric != "strong_sq" && metric != "weak_sq")
    throw std::invalid_argument("fit_rate: unknown metric '" + metric + "'");
  std::vector<double> x, y;
  for (const auto& a : aggregate(rows)) {
    if (a.strategy != strategy) continue;
    x.push_back(static_cast<double>(a.n));
    y.push_back(metric == "abs_error" ? a.abs_error_mean : metric == "strong_sq" ? a.strong_sq_mean : a.weak_sq_mean);
  }
  return fit_rate(x, y);
}

// ---------------------------------------------------------------------------------------------
// Spectral sweep

SpectralSweepSpec SpectralSweepSpec::defaults() {
  SpectralSweepSpec s;
  for (int e = 3; e <= 9; ++e) s.deltas.push_back(std::ldexp(1.0, -e));
  return s;
}

SpectralSweepSpec SpectralSweepSpec::from_json(const Json& j) {
  const std::string where = "sweep";
  reject_unknown_keys(j, {"d", "decay_p", "betas", "deltas", "seeds", "seed", "w0_exponent", "k", "l", "lambda0", "rho"}, where);
  SpectralSweepSpec s = defaults();
  s.d = get_or(j, "d", s.d, where);
  s.decay_p = get_or(j, "decay_p", s.decay_p, where);
  s.betas = get_or(j, "betas", s.betas, where);
  s.deltas = get_or(j, "deltas", s.deltas, where);
  s.seeds = get_or(j, "seeds", s.seeds, where);
  s.seed = get_or(j, "seed", s.seed, where);
  s.w0_exponent = get_or(j, "w0_exponent", s.w0_exponent, where);
  s.dp.k = get_or(j, "k", s.dp.k, where);
  s.dp.l = get_or(j, "l", s.dp.l, where);
  s.dp.lambda0 = get_or(j, "lambda0", s.dp.lambda0, where);
  s.dp.rho = get_or(j, "rho", s.dp.rho, where);
  if (s.d < 1 || s.seeds < 1 || s.betas.empty() || s.deltas.empty())
    throw std::invalid_argument("sweep: need d >= 1, seeds >= 1 and nonempty betas/deltas");
  return s;
}

Json SpectralSweepSpec::to_json() const {
  return Json{{"d", d},       {"decay_p", decay_p}, {"betas", betas},         {"deltas", deltas},
              {"seeds", seeds}, {"seed", seed},      {"w0_exponent", w0_exponent}, {"k", dp.k},
              {"l", dp.l},    {"lambda0", dp.lambda0}, {"rho", dp.rho}};
}

std::vector<SpectralSweepRow> spectral_sweep(const SpectralSweepSpec& spec, int jobs) {
  const std::size_t nb = spec.betas.size(), nd = spec.deltas.size();
  Eigen::VectorXd w0(spec.d);
  for (Eigen::Index i = 0; i < spec.d; ++i) w0(i) = std::pow(static_cast<double>(i + 1), spec.w0_exponent);
  return parallel_map<SpectralSweepRow>(nb * nd, jobs, [&](std::size_t cell) {
    const std::size_t bi = cell / nd, di = cell % nd;
    const auto prob = spectral::make_source_problem<double>(spec.d, spec.decay_p, spec.betas[bi], w0);
    SpectralSweepRow row;
    row.beta = spec.betas[bi];
    row.delta = spec.deltas[di];
    for (int s = 0; s < spec.seeds; ++s) {
      Rng rng(derive_seed(spec.seed, {bi, di, static_cast<std::uint64_t>(s)}));
      const auto obs = spectral::make_noisy_observation(prob, row.delta, rng);
      const auto sel = spectral::classical_dp_select(prob, obs, spec.dp);
      const double strong = spectral::strong_metric(prob, sel.solution);
      const double weak = spectral::weak_metric(prob, sel.solution);
      row.strong_sq_mean += strong * strong;
      row.weak_sq_mean += weak * weak;
      row.lambda_mean += sel.lambda();
      row.max_grid_index = std::max(row.max_grid_index, sel.grid_index);
      if (!sel.bracket_ok) ++row.bracket_failures;
    }
    row.strong_sq_mean /= spec.seeds;
    row.weak_sq_mean /= spec.seeds;
    row.lambda_mean /= spec.seeds;
    return row;
  });
}

std::string format_sweep_csv(const std::vector<SpectralSweepRow>& rows) {
  fmt::memory_buffer buf;
  auto out = std::back_inserter(buf);
  fmt::format_to(out, "beta,delta,strong_sq_mean,weak_sq_mean,lambda_mean,max_grid_index,bracket_failures\n");
  for (const auto& r : rows)
    fmt::format_to(out, "{},{},{},{},{},{},{}\n", format_double(r.beta), format_double(r.delta),
                   format_double(r.strong_sq_mean), format_double(r.weak_sq_mean), format_double(r.lambda_mean),
                   r.max_grid_index, r.bracket_failures);
  return fmt::to_string(buf);
}

std::vector<SpectralRates> spectral_rates(const std::vector<SpectralSweepRow>& rows) {
  std::vector<double> betas;
  for (const auto& r : rows)
    if (std::find(betas.begin(), betas.end(), r.beta) == betas.end()) betas.push_back(r.beta);
  std::vector<SpectralRates> out;
  for (double b : betas) {
    std::vector<double> d, d2, strong, weak, lam;
    for (const auto& r : rows) {
      if (r.beta != b) continue;
      d.push_back(r.delta);
      d2.push_back(r.delta * r.delta);
      strong.push_back(r.strong_sq_mean);
      weak.push_back(r.weak_sq_mean);
      lam.push_back(r.lambda_mean);
    }
    out.push_back({b, fit_rate(d2, strong), fit_rate(d, strong), fit_rate(d, weak), fit_rate(d, lam)});
  }
  return out;
}

}  // namespace dpreg
