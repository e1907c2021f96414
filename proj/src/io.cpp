#include "dpreg/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

#include "dpreg/error.hpp"
#include "dpreg/sieve.hpp"

namespace dpreg {

std::string format_double(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------------------------------------
// Files

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// JSON

Json vector_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vector_from_json(const Json& j, const std::string& key) {
  if (!j.is_array()) throw ParseError("'" + key + "' must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError(fmt::format("'{}'[{}] is not a number", key, i));
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

static const Json& require(const Json& j, const std::string& key) {
  if (!j.is_object()) throw ParseError("expected a JSON object");
  const auto it = j.find(key);
  if (it == j.end()) throw ParseError("missing key '" + key + "'");
  return *it;
}

static double require_number(const Json& j, const std::string& key) {
  const Json& v = require(j, key);
  if (!v.is_number()) throw ParseError("'" + key + "' must be a number");
  return v.get<double>();
}

Json to_json(const spectral::SpectralProblem<double>& problem) {
  return Json{{"singular_values", vector_to_json(problem.singular_values())},
              {"h0_coeffs", vector_to_json(problem.h0_coeffs())},
              {"beta", problem.beta()},
              {"w0_coeffs", vector_to_json(problem.w0_coeffs())}};
}

spectral::SpectralProblem<double> spectral_problem_from_json(const Json& j) {
  return spectral::SpectralProblem<double>(vector_from_json(require(j, "singular_values"), "singular_values"),
                                           vector_from_json(require(j, "h0_coeffs"), "h0_coeffs"),
                                           require_number(j, "beta"),
                                           vector_from_json(require(j, "w0_coeffs"), "w0_coeffs"));
}

Json to_json(const FitResult& fit, int iterations) {
  Json j{{"coeffs", vector_to_json(fit.coeffs)},
         {"lambda", fit.lambda},
         {"empirical_loss", fit.empirical_loss},
         {"norm_penalty", fit.norm_penalty},
         {"iterations", iterations}};
  if (fit.inner_adversary) j["inner_adversary"] = vector_to_json(*fit.inner_adversary);
  return j;
}

FitResult fit_result_from_json(const Json& j) {
  FitResult fit;
  fit.coeffs = vector_from_json(require(j, "coeffs"), "coeffs");
  fit.lambda = require_number(j, "lambda");
  fit.empirical_loss = require_number(j, "empirical_loss");
  fit.norm_penalty = require_number(j, "norm_penalty");
  if (j.contains("inner_adversary")) fit.inner_adversary = vector_from_json(j["inner_adversary"], "inner_adversary");
  return fit;
}

Json to_json(const DpOutcome& outcome) {
  Json path = Json::array();
  for (const auto& e : outcome.path.entries)
    path.push_back(Json{{"lambda", e.lambda}, {"empirical_loss", e.fit.empirical_loss}, {"norm_penalty", e.fit.norm_penalty}});
  return Json{{"lambda_dp", outcome.lambda_dp},
              {"delta", outcome.delta},
              {"bracket_ok", outcome.bracket_ok},
              {"converged", outcome.converged},
              {"iterations", outcome.iterations},
              {"k_star", outcome.k_star},
              {"fit", to_json(outcome.fit, outcome.iterations)},
              {"path", std::move(path)},
              {"warnings", outcome.warnings}};
}

Json to_json(const FunctionalEstimate& e) {
  return Json{{"theta_hat", e.theta_hat}, {"se", e.se},         {"ci_low", e.ci_low},
              {"ci_high", e.ci_high},     {"level", e.level},   {"n_eval", e.n_eval}};
}

// ---------------------------------------------------------------------------------------------
// Dataset CSV

namespace {

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& c : cells) {
    while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
    while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
  }
  return cells;
}

bool has_prefix_index(std::string_view name, std::string_view prefix) {
  if (name.substr(0, prefix.size()) != prefix || name.size() == prefix.size()) return false;
  for (char c : name.substr(prefix.size()))
    if (c < '0' || c > '9') return false;
  return true;
}

}  // namespace

Dataset parse_dataset_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("dataset CSV: empty input");
  const auto header = split_line(line);
  std::vector<std::string> names(header.begin(), header.end());
  int dx = 0, dz = 0, y_col = -1;
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (has_prefix_index(names[c], "x_")) {
      if (y_col >= 0 || dz > 0 || names[c] != "x_" + std::to_string(dx))
        throw ParseError(fmt::format("dataset CSV header: unexpected column '{}' at position {}", names[c], c + 1));
      ++dx;
    } else if (has_prefix_index(names[c], "z_")) {
      if (y_col >= 0 || names[c] != "z_" + std::to_string(dz))
        throw ParseError(fmt::format("dataset CSV header: unexpected column '{}' at position {}", names[c], c + 1));
      ++dz;
    } else if (names[c] == "y") {
      if (y_col >= 0) throw ParseError("dataset CSV header: duplicate 'y' column");
      y_col = static_cast<int>(c);
    } else if (y_col < 0) {
      throw ParseError(fmt::format("dataset CSV header: unexpected column '{}' before 'y'", names[c]));
    }
  }
  if (dx == 0 || dz == 0 || y_col < 0) throw ParseError("dataset CSV header: need x_0.., z_0.. and y columns");
  const std::size_t width = names.size();
  const int n_extra = static_cast<int>(width) - y_col - 1;

  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != width)
      throw ParseError(fmt::format("dataset CSV row {}: expected {} cells, found {}", line_no, width, cells.size()));
    std::vector<double> row(width);
    for (std::size_t c = 0; c < width; ++c) {
      const std::string_view cell = cells[c];
      const char* end = cell.data() + cell.size();
      auto [ptr, ec] = std::from_chars(cell.data(), end, row[c]);
      if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(row[c]))
        throw ParseError(fmt::format("dataset CSV row {}, column {} ('{}'): non-numeric cell '{}'", line_no, c + 1,
                                     names[c], cell));
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Dataset d;
  d.x.resize(n, dx);
  d.z.resize(n, dz);
  d.y.resize(n);
  d.extras.resize(n_extra > 0 ? n : 0, n_extra);
  d.extra_names.assign(names.begin() + y_col + 1, names.end());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (int j = 0; j < dx; ++j) d.x(i, j) = r[static_cast<std::size_t>(j)];
    for (int j = 0; j < dz; ++j) d.z(i, j) = r[static_cast<std::size_t>(dx + j)];
    d.y(i) = r[static_cast<std::size_t>(y_col)];
    for (int j = 0; j < n_extra; ++j) d.extras(i, j) = r[static_cast<std::size_t>(y_col + 1 + j)];
  }
  d.validate();
  return d;
}

Dataset read_dataset_csv(const std::string& path) {
  try {
    return parse_dataset_csv(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string format_dataset_csv(const Dataset& data) {
  data.validate();
  fmt::memory_buffer buf;
  auto out = std::back_inserter(buf);
  for (Eigen::Index j = 0; j < data.x.cols(); ++j) fmt::format_to(out, "x_{},", j);
  for (Eigen::Index j = 0; j < data.z.cols(); ++j) fmt::format_to(out, "z_{},", j);
  fmt::format_to(out, "y");
  for (const auto& name : data.extra_names) fmt::format_to(out, ",{}", name);
  fmt::format_to(out, "\n");
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) fmt::format_to(out, "{},", data.x(i, j));
    for (Eigen::Index j = 0; j < data.z.cols(); ++j) fmt::format_to(out, "{},", data.z(i, j));
    fmt::format_to(out, "{}", data.y(i));
    for (Eigen::Index j = 0; j < data.extras.cols(); ++j) fmt::format_to(out, ",{}", data.extras(i, j));
    fmt::format_to(out, "\n");
  }
  return fmt::to_string(buf);
}

void write_dataset_csv(const Dataset& data, const std::string& path) { write_text_file(path, format_dataset_csv(data)); }

}  // namespace dpreg
