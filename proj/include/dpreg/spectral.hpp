#pragma once

// Diagonal (SVD-form) operator model. Everything here is closed form and serves as
// the exact oracle for the data-driven estimators and the discrepancy search.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "dpreg/error.hpp"
#include "dpreg/rng.hpp"

namespace dpreg::spectral {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Operator T with T v_i = sigma_i u_i and a true solution h0 = sum_i a_i v_i
/// satisfying the source condition a_i = sigma_i^beta * w0_i.
template <typename Scalar = double>
class SpectralProblem {
 public:
  using Vector = Vec<Scalar>;

  SpectralProblem(Vector singular_values, Vector h0_coeffs, Scalar beta, Vector w0_coeffs)
      : sigma_(std::move(singular_values)),
        a_(std::move(h0_coeffs)),
        beta_(beta),
        w0_(std::move(w0_coeffs)) {
    using std::abs;
    using std::pow;
    const Eigen::Index d = sigma_.size();
    if (d < 1) throw std::invalid_argument("SpectralProblem: dimension must be >= 1");
    if (a_.size() != d || w0_.size() != d)
      throw std::invalid_argument("SpectralProblem: singular_values, h0_coeffs and w0_coeffs differ in length");
    if (!(beta_ > Scalar(0))) throw std::invalid_argument("SpectralProblem: beta must be positive");
    if (!(sigma_(0) <= Scalar(1))) throw std::invalid_argument("SpectralProblem: sigma_1 must be <= 1");
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!(sigma_(i) > Scalar(0))) throw std::invalid_argument("SpectralProblem: singular values must be positive");
      if (i > 0 && sigma_(i) > sigma_(i - 1))
        throw std::invalid_argument("SpectralProblem: singular values must be nonincreasing");
      const Scalar expected = pow(sigma_(i), beta_) * w0_(i);
      const Scalar tol = Scalar(64) * std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), abs(expected));
      if (!(abs(a_(i) - expected) <= tol))
        throw std::invalid_argument("SpectralProblem: h0_coeffs violate a_i = sigma_i^beta * w0_i at index " +
                                    std::to_string(i));
    }
  }

  const Vector& singular_values() const { return sigma_; }
  const Vector& h0_coeffs() const { return a_; }
  Scalar beta() const { return beta_; }
  const Vector& w0_coeffs() const { return w0_; }
  Eigen::Index dim() const { return sigma_.size(); }

  /// Coefficients of r0 = T h0 in the left singular basis.
  Vector exact_rhs() const { return sigma_.cwiseProduct(a_); }

 private:
  Vector sigma_;
  Vector a_;
  Scalar beta_;
  Vector w0_;
};

template <typename Scalar = double>
struct TikhonovSolution {
  Scalar lambda;  // +inf encodes the zero solution of the discrepancy rule
  Vec<Scalar> coeffs;

  bool is_infinite() const { return std::isinf(lambda); }
};

/// Observed right-hand side r_delta with a known bound ||r_delta - r0|| <= delta.
/// delta = 0 denotes a noiseless observation.
template <typename Scalar = double>
class NoisyObservation {
 public:
  using Vector = Vec<Scalar>;

  NoisyObservation(Vector r_coeffs, Scalar delta) : r_(std::move(r_coeffs)), delta_(delta) {
    if (!(delta_ >= Scalar(0))) throw std::invalid_argument("NoisyObservation: delta must be >= 0");
  }

  NoisyObservation(Vector r_coeffs, Scalar delta, const SpectralProblem<Scalar>& parent)
      : NoisyObservation(std::move(r_coeffs), delta) {
    if (r_.size() != parent.dim()) throw std::invalid_argument("NoisyObservation: dimension mismatch with problem");
    const Scalar err = (r_ - parent.exact_rhs()).norm();
    const Scalar slack = Scalar(64) * std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), delta_);
    if (!(err <= delta_ + slack))
      throw std::invalid_argument("NoisyObservation: ||r - r0|| exceeds the stated noise bound");
  }

  const Vector& r_coeffs() const { return r_; }
  Scalar delta() const { return delta_; }
  Eigen::Index dim() const { return r_.size(); }

 private:
  Vector r_;
  Scalar delta_;
};

/// sigma_i = scale * i^{-decay_p}, a_i = sigma_i^beta * w0_i.
template <typename Scalar = double>
SpectralProblem<Scalar> make_source_problem(Eigen::Index d, Scalar decay_p, Scalar beta, const Vec<Scalar>& w0_coeffs,
                                            Scalar scale = Scalar(1)) {
  using std::pow;
  if (d < 1) throw std::invalid_argument("make_source_problem: d must be >= 1");
  if (w0_coeffs.size() != d) throw std::invalid_argument("make_source_problem: w0_coeffs length != d");
  if (!(decay_p > Scalar(0))) throw std::invalid_argument("make_source_problem: decay_p must be positive");
  if (!(beta > Scalar(0))) throw std::invalid_argument("make_source_problem: beta must be positive");
  if (!(scale > Scalar(0)) || scale > Scalar(1)) throw std::invalid_argument("make_source_problem: scale must be in (0, 1]");
  Vec<Scalar> sigma(d), a(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    sigma(i) = scale * pow(Scalar(i + 1), -decay_p);
    a(i) = pow(sigma(i), beta) * w0_coeffs(i);
  }
  return SpectralProblem<Scalar>(std::move(sigma), std::move(a), beta, w0_coeffs);
}

template <typename Scalar>
NoisyObservation<Scalar> noiseless_observation(const SpectralProblem<Scalar>& prob) {
  return NoisyObservation<Scalar>(prob.exact_rhs(), Scalar(0));
}

/// Gaussian perturbation of r0 rescaled to have norm exactly delta.
template <typename Scalar>
NoisyObservation<Scalar> make_noisy_observation(const SpectralProblem<Scalar>& prob, Scalar delta, Rng& rng) {
  if (!(delta > Scalar(0))) throw std::invalid_argument("make_noisy_observation: delta must be positive");
  Vec<Scalar> noise = standard_normal(rng, prob.dim()).template cast<Scalar>();
  noise *= delta / noise.norm();
  return NoisyObservation<Scalar>(prob.exact_rhs() + noise, delta);
}

/// Minimizer of ||T h - r||^2 + lambda ||h||^2: coeffs_i = sigma_i r_i / (sigma_i^2 + lambda).
template <typename Scalar>
TikhonovSolution<Scalar> tikhonov_solve(const SpectralProblem<Scalar>& prob, const NoisyObservation<Scalar>& r,
                                        Scalar lambda) {
  if (r.dim() != prob.dim()) throw std::invalid_argument("tikhonov_solve: dimension mismatch");
  if (!(lambda >= Scalar(0))) throw std::invalid_argument("tikhonov_solve: lambda must be >= 0");
  if (std::isinf(lambda)) return {lambda, Vec<Scalar>::Zero(prob.dim())};
  const auto& s = prob.singular_values();
  Vec<Scalar> c = (s.array() * r.r_coeffs().array() / (s.array().square() + lambda)).matrix();
  return {lambda, std::move(c)};
}

/// Population regularized solution h*_lambda in filter-factor form sigma^2/(sigma^2+lambda) * a.
template <typename Scalar>
TikhonovSolution<Scalar> regularized_solution(const SpectralProblem<Scalar>& prob, Scalar lambda) {
  if (!(lambda >= Scalar(0))) throw std::invalid_argument("regularized_solution: lambda must be >= 0");
  if (std::isinf(lambda)) return {lambda, Vec<Scalar>::Zero(prob.dim())};
  const auto s2 = prob.singular_values().array().square();
  Vec<Scalar> c = (s2 / (s2 + lambda) * prob.h0_coeffs().array()).matrix();
  return {lambda, std::move(c)};
}

/// ||T h_lambda - r||, evaluated as ||lambda r_i / (sigma_i^2 + lambda)|| to avoid cancellation.
template <typename Scalar>
Scalar tikhonov_residual(const SpectralProblem<Scalar>& prob, const NoisyObservation<Scalar>& r, Scalar lambda) {
  if (std::isinf(lambda)) return r.r_coeffs().norm();
  const auto s2 = prob.singular_values().array().square();
  return (lambda * r.r_coeffs().array() / (s2 + lambda)).matrix().norm();
}

/// ||T (h - h0)||.
template <typename Scalar>
Scalar weak_metric(const SpectralProblem<Scalar>& prob, const TikhonovSolution<Scalar>& sol) {
  if (sol.coeffs.size() != prob.dim()) throw std::invalid_argument("weak_metric: dimension mismatch");
  return (prob.singular_values().array() * (sol.coeffs - prob.h0_coeffs()).array()).matrix().norm();
}

/// ||h - h0||.
template <typename Scalar>
Scalar strong_metric(const SpectralProblem<Scalar>& prob, const TikhonovSolution<Scalar>& sol) {
  if (sol.coeffs.size() != prob.dim()) throw std::invalid_argument("strong_metric: dimension mismatch");
  return (sol.coeffs - prob.h0_coeffs()).norm();
}

template <typename Scalar = double>
struct ClassicalDpOptions {
  Scalar k = Scalar(1.5);
  Scalar l = Scalar(2);
  Scalar lambda0 = Scalar(2);
  Scalar rho = Scalar(0.5);
  int max_grid_steps = 200;
};

template <typename Scalar = double>
struct ClassicalDpResult {
  TikhonovSolution<Scalar> solution;
  int grid_index = -1;  // -1 for the lambda = inf branch
  Scalar residual{};    // ||T h - r|| at the selected lambda
  Scalar predecessor_residual = std::numeric_limits<Scalar>::quiet_NaN();
  bool bracket_ok = false;

  Scalar lambda() const { return solution.lambda; }
};

/// Morozov rule on the grid lambda0 * rho^j. Returns lambda = inf with h = 0 when
/// ||r|| <= k delta; otherwise the largest grid lambda with residual <= k delta.
/// bracket_ok certifies the predecessor lambda' = lambda / rho <= l lambda has residual >= k delta.
template <typename Scalar>
ClassicalDpResult<Scalar> classical_dp_select(const SpectralProblem<Scalar>& prob, const NoisyObservation<Scalar>& r,
                                              const ClassicalDpOptions<Scalar>& opt = {}) {
  if (r.dim() != prob.dim()) throw std::invalid_argument("classical_dp_select: dimension mismatch");
  if (!(opt.k > Scalar(0))) throw std::invalid_argument("classical_dp_select: k must be positive");
  if (!(opt.l > Scalar(1))) throw std::invalid_argument("classical_dp_select: l must be > 1");
  if (!(opt.lambda0 > Scalar(0))) throw std::invalid_argument("classical_dp_select: lambda0 must be positive");
  if (!(opt.rho > Scalar(0) && opt.rho < Scalar(1))) throw std::invalid_argument("classical_dp_select: rho must be in (0,1)");

  const Scalar target = opt.k * r.delta();
  ClassicalDpResult<Scalar> out;
  if (r.r_coeffs().norm() <= target) {
    out.solution = {std::numeric_limits<Scalar>::infinity(), Vec<Scalar>::Zero(prob.dim())};
    out.residual = r.r_coeffs().norm();
    return out;
  }
  Scalar lambda = opt.lambda0;
  Scalar previous = std::numeric_limits<Scalar>::quiet_NaN();
  for (int j = 0; j <= opt.max_grid_steps; ++j) {
    const Scalar res = tikhonov_residual(prob, r, lambda);
    if (res <= target) {
      out.solution = tikhonov_solve(prob, r, lambda);
      out.grid_index = j;
      out.residual = res;
      out.predecessor_residual = previous;
      out.bracket_ok = j >= 1 && previous >= target && lambda / opt.rho <= opt.l * lambda;
      return out;
    }
    previous = res;
    lambda *= opt.rho;
  }
  throw NumericalError("classical_dp_select: grid exhausted after " + std::to_string(opt.max_grid_steps) +
                       " steps without reaching residual <= k*delta (delta inconsistent with the problem?)");
}

/// c0 = sum_i a_i^2 sigma_i^2 / (sigma_i^2 + 2)^2, so that weak^2 >= c0 lambda^2 on (0, 2).
template <typename Scalar>
Scalar lower_bound_constant(const SpectralProblem<Scalar>& prob) {
  const auto s2 = prob.singular_values().array().square();
  return (prob.h0_coeffs().array().square() * s2 / (s2 + Scalar(2)).square()).sum();
}

/// gamma = min(beta/2, 1).
template <typename Scalar>
Scalar holder_exponent(const SpectralProblem<Scalar>& prob) {
  return std::min(prob.beta() / Scalar(2), Scalar(1));
}

/// c_h with ||h*_l - h*_l'|| <= c_h |l - l'|^gamma for l, l' in (0, 2].
template <typename Scalar>
Scalar holder_constant(const SpectralProblem<Scalar>& prob) {
  using std::pow;
  using std::sqrt;
  const auto& s = prob.singular_values().array();
  const auto a2 = prob.h0_coeffs().array().square();
  if (prob.beta() <= Scalar(2)) {
    const Scalar c0 = sqrt((a2 / s.pow(Scalar(2) * prob.beta())).sum());
    return Scalar(2) / prob.beta() * c0;
  }
  return sqrt((a2 / s.pow(Scalar(4))).sum());
}

/// ||w0||^{1/(1+beta)} * ||T(h0 - h)||^{beta/(1+beta)}, an upper bound on ||h0 - h*_lambda||.
template <typename Scalar>
Scalar interpolation_bound(const SpectralProblem<Scalar>& prob, const TikhonovSolution<Scalar>& sol) {
  using std::pow;
  const Scalar b = prob.beta();
  return pow(prob.w0_coeffs().norm(), Scalar(1) / (Scalar(1) + b)) * pow(weak_metric(prob, sol), b / (Scalar(1) + b));
}

}  // namespace dpreg::spectral
