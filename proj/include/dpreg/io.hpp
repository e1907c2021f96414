#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dpreg/discrepancy.hpp"
#include "dpreg/dr_functional.hpp"
#include "dpreg/estimators.hpp"
#include "dpreg/spectral.hpp"

namespace dpreg {

using Json = nlohmann::json;

Json vector_to_json(const Eigen::Ref<const Eigen::VectorXd>& v);
/// Throws ParseError naming `key` unless j is an array of numbers.
Eigen::VectorXd vector_from_json(const Json& j, const std::string& key);

/// Fields singular_values, h0_coeffs, beta, w0_coeffs. Round trip is bit-exact for finite doubles.
Json to_json(const spectral::SpectralProblem<double>& problem);
spectral::SpectralProblem<double> spectral_problem_from_json(const Json& j);

/// Fields coeffs, lambda, empirical_loss, norm_penalty, iterations (+ inner_adversary when present).
Json to_json(const FitResult& fit, int iterations = 1);
FitResult fit_result_from_json(const Json& j);

/// Full audit record including the path.
Json to_json(const DpOutcome& outcome);

/// Without per-record components.
Json to_json(const FunctionalEstimate& estimate);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
/// ParseError with the file name and parser position on malformed input.
Json read_json_file(const std::string& path);

/// Shortest representation that round-trips.
std::string format_double(double v);

}  // namespace dpreg
