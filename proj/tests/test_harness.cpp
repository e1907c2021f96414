#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "dpreg/error.hpp"
#include "dpreg/harness.hpp"
#include "dpreg/io.hpp"

using namespace dpreg;

namespace {

Json npiv_spec_json() {
  return Json::parse(R"({
    "dgp": "npiv",
    "estimator": "trae",
    "strategies": [{"kind": "dp", "schedule": "trae_squared", "cd": 2.0},
                   {"kind": "fixed", "lambda": 0.0},
                   {"kind": "fixed", "lambda": 0.01}],
    "sizes": [200, 400],
    "repetitions": 3,
    "seed": 17
  })");
}

std::string csv_without_wall(const RunRecord& r) { return format_run_csv(r.rows, false); }

struct Shell {
  int status;
  std::string out;
};

Shell run(const std::string& cmd) {
  const std::string full = cmd + " 2>&1";
  FILE* pipe = popen(full.c_str(), "r");
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int raw = pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dpreg_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

const std::string kCli = DPREG_CLI_PATH;
const std::string kFixtures = DPREG_FIXTURE_DIR;

}  // namespace

TEST(RateFit, Examples) {
  std::vector<double> x{1, 2, 4, 8, 16}, y, c(5, 3.0);
  for (double v : x) y.push_back(2.0 * std::sqrt(v));
  const RateFit f = fit_rate(x, y);
  EXPECT_NEAR(f.slope, 0.5, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(2.0), 1e-12);
  EXPECT_NEAR(f.slope_se, 0.0, 1e-12);
  EXPECT_NEAR(fit_rate(x, c).slope, 0.0, 1e-12);
  EXPECT_THROW(fit_rate({1, 2}, {1, 2}), std::invalid_argument);
  EXPECT_THROW(fit_rate({1, 2, 0}, {1, 2, 3}), std::domain_error);
}

TEST(Spec, RoundTripAndHash) {
  const ExperimentSpec s = ExperimentSpec::from_json(npiv_spec_json());
  EXPECT_EQ(s.strategies[0].label(), "dp");
  EXPECT_EQ(s.strategies[1].label(), "fixed_0");
  EXPECT_EQ(s.strategies[2].label(), "fixed_0.01");
  const ExperimentSpec back = ExperimentSpec::from_json(s.to_json());
  EXPECT_EQ(back.hash(), s.hash());
  ExperimentSpec moved = s;
  moved.output = "elsewhere";
  EXPECT_EQ(moved.hash(), s.hash());
  moved.seed = 18;
  EXPECT_NE(moved.hash(), s.hash());
}

TEST(Spec, RejectsUnknownAndMissingKeys) {
  Json j = npiv_spec_json();
  j["colour"] = "blue";
  try {
    ExperimentSpec::from_json(j);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
  j = npiv_spec_json();
  j.erase("sizes");
  EXPECT_THROW(ExperimentSpec::from_json(j), std::invalid_argument);
  j = npiv_spec_json();
  j["strategies"][0].erase("cd");
  EXPECT_THROW(ExperimentSpec::from_json(j), std::invalid_argument);
  j = npiv_spec_json();
  j["strategies"][2]["lambda"] = 0.0;
  EXPECT_THROW(ExperimentSpec::from_json(j), std::invalid_argument);
}

TEST(Experiment, RowCountAndDeterminism) {
  const ExperimentSpec s = ExperimentSpec::from_json(npiv_spec_json());
  const RunRecord a = run_experiment(s, 1), b = run_experiment(s, 4);
  EXPECT_EQ(a.rows.size(), 2u * 3u * 3u);
  EXPECT_EQ(csv_without_wall(a), csv_without_wall(b));
  for (const auto& r : a.rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_LE(r.weak_sq, r.strong_sq + 1e-12);
    EXPECT_GE(r.iters, 1);
    EXPECT_LE(r.iters, 20);
  }
}

TEST(Experiment, FullGridRowCount) {
  Json j = npiv_spec_json();
  j["sizes"] = {1000, 2000, 3000, 5000};
  j["repetitions"] = 50;
  j["strategies"].push_back(Json{{"kind", "fixed"}, {"lambda", 0.1}});
  const RunRecord r = run_experiment(ExperimentSpec::from_json(j), 8);
  EXPECT_EQ(r.rows.size(), 800u);
}

TEST(Experiment, FixedZeroIsUnregularizedSolve) {
  const ExperimentSpec s = ExperimentSpec::from_json(npiv_spec_json());
  const RunRecord r = run_experiment(s, 2);
  for (const auto& row : r.rows)
    if (row.strategy == "fixed_0") {
      EXPECT_EQ(row.lambda_dp, 0.0);
      EXPECT_EQ(row.iters, 1);
    }
}

TEST(Records, CsvRoundTripAndAggregates) {
  const RunRecord r = run_experiment(ExperimentSpec::from_json(npiv_spec_json()), 2);
  const auto parsed = parse_run_csv(format_run_csv(r.rows));
  ASSERT_EQ(parsed.size(), r.rows.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    EXPECT_EQ(parsed[i].abs_error, r.rows[i].abs_error);
    EXPECT_EQ(parsed[i].lambda_dp, r.rows[i].lambda_dp);
    EXPECT_EQ(parsed[i].strategy, r.rows[i].strategy);
  }
  const auto aggs = aggregate(r.rows);
  ASSERT_EQ(aggs.size(), 6u);
  for (const auto& a : aggs) {
    std::vector<double> e;
    for (const auto& row : r.rows)
      if (row.n == a.n && row.strategy == a.strategy) e.push_back(row.abs_error);
    double mean = 0.0;
    for (double v : e) mean += v;
    mean /= static_cast<double>(e.size());
    double ss = 0.0;
    for (double v : e) ss += (v - mean) * (v - mean);
    std::sort(e.begin(), e.end());
    EXPECT_NEAR(a.abs_error_mean, mean, 1e-12);
    EXPECT_NEAR(a.abs_error_se, std::sqrt(ss / (e.size() - 1) / e.size()), 1e-12);
    EXPECT_EQ(a.abs_error_median, e[1]);
    EXPECT_EQ(a.count, 3);
  }
  const Json summary = summary_json(r);
  EXPECT_EQ(summary["spec_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(summary["aggregates"].size(), 6u);
  EXPECT_THROW(parse_run_csv("n,strategy\n1,dp\n"), std::exception);
}

TEST(Sweep, DeterministicAcrossJobCounts) {
  SpectralSweepSpec s = SpectralSweepSpec::defaults();
  s.seeds = 3;
  s.d = 50;
  EXPECT_EQ(format_sweep_csv(spectral_sweep(s, 1)), format_sweep_csv(spectral_sweep(s, 3)));
  const SpectralSweepSpec back = SpectralSweepSpec::from_json(s.to_json());
  EXPECT_EQ(back.deltas, s.deltas);
  EXPECT_EQ(back.seeds, 3);
}

TEST(Json, FitResultRoundTrip) {
  FitResult f;
  f.coeffs = (Eigen::VectorXd(3) << 0.1, -2.0 / 3.0, 1e-300).finished();
  f.lambda = 0.125;
  f.empirical_loss = 1.0 / 7.0;
  f.norm_penalty = 3.0;
  f.inner_adversary = Eigen::VectorXd::Constant(2, M_PI);
  const FitResult back = fit_result_from_json(Json::parse(to_json(f, 4).dump()));
  EXPECT_EQ(back.coeffs, f.coeffs);
  EXPECT_EQ(back.empirical_loss, f.empirical_loss);
  EXPECT_EQ(*back.inner_adversary, *f.inner_adversary);
  EXPECT_THROW(fit_result_from_json(Json::parse(R"({"coeffs": [1, "a"]})")), ParseError);
}

TEST(Cli, UnknownSubcommandExitsOne) { EXPECT_EQ(run(kCli + " bogus").status, 1); }

TEST(Cli, FixtureDpPath) {
  const Shell s = run(kCli + " dp --config " + kFixtures + "/single_mode.json");
  EXPECT_EQ(s.status, 0) << s.out;
  EXPECT_NE(s.out.find("0.25"), std::string::npos) << s.out;
}

TEST(Cli, BadConfigKeyExitsOne) {
  const auto path = scratch("bad_spec.json");
  Json j = npiv_spec_json();
  j["nonsense"] = 1;
  write_text_file(path.string(), j.dump());
  const Shell s = run(kCli + " experiment --config " + path.string());
  EXPECT_EQ(s.status, 1) << s.out;
  EXPECT_NE(s.out.find("nonsense"), std::string::npos) << s.out;
}

TEST(Cli, NumericalFailureExitsTwo) {
  const auto path = scratch("constant_z.csv");
  std::string text = "x_0,z_0,y\n";
  for (int i = 0; i < 20; ++i) text += std::to_string(0.05 * i) + ",0.5," + std::to_string(i % 3) + "\n";
  write_text_file(path.string(), text);
  const Shell s = run(kCli + " fit --data " + path.string() + " --dgp npiv --estimator rdiv --lambda 0.1 --ridge-stage1 0");
  EXPECT_EQ(s.status, 2) << s.out;
}

TEST(Cli, ExperimentThenReport) {
  const auto spec_path = scratch("small_spec.json");
  const auto prefix = scratch("small_run");
  Json j = npiv_spec_json();
  j["output"] = prefix.string();
  write_text_file(spec_path.string(), j.dump());
  const Shell e = run(kCli + " experiment --config " + spec_path.string() + " --jobs 2");
  ASSERT_EQ(e.status, 0) << e.out;
  const Json summary = read_json_file(prefix.string() + ".summary.json");
  EXPECT_EQ(summary["rows"].get<int>(), 18);
  const Shell r = run(kCli + " report --record " + prefix.string() + ".csv --csv");
  ASSERT_EQ(r.status, 0) << r.out;
  const RunRecord direct = run_experiment(ExperimentSpec::from_json(j), 1);
  EXPECT_EQ(r.out, format_aggregate_csv(aggregate(direct.rows)));
}

TEST(Cli, GenerateSidecarFeedsDp) {
  const auto out = scratch("sidecar_run").string();
  ASSERT_EQ(run(kCli + " generate --dgp npiv --n 300 --seed 4 --out " + out).status, 0);
  const Shell ok = run(kCli + " dp --data " + out + " --dgp npiv --params " + out + ".params.json --estimator trae"
                       " --schedule trae --cd 2");
  EXPECT_EQ(ok.status, 0) << ok.out;
  const Shell wrong = run(kCli + " dp --data " + out + " --dgp proxy_nc --params " + out + ".params.json --schedule trae --cd 2");
  EXPECT_EQ(wrong.status, 1) << wrong.out;
  EXPECT_NE(wrong.out.find("npiv"), std::string::npos) << wrong.out;
}
