#pragma once

// Closed-form regularized estimators over linear sieves.
//
// RDIV: the conditional-mean operator is estimated by regressing every X-basis function on the
// Z-basis (stage 1), then h minimizes E_n[(Y - (T h)(Z))^2] + lambda E_n[h(X)^2].
//
// TRAE: the inner maximum max_f E_n[2 m(W;f) - 2 h(X) f(Z) - f(Z)^2] over a linear class is the
// quadratic (g - B c)^T M^{-1} (g - B c); the outer problem is again a ridge-type quadratic.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dpreg/sieve.hpp"

namespace dpreg {

enum class MomentKind { Outcome, Ate, Custom };

/// Linear functional f -> m(W; f), evaluated record-wise on a sieve.
class MomentFunctional {
 public:
  /// Evaluates every basis function at an arbitrary point matrix (m x input_dim -> m x K).
  using BasisEval = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;
  /// Returns the n x K matrix m(W_i; psi_k) for the features of `side`.
  using Evaluator = std::function<Eigen::MatrixXd(const Dataset&, Side, const BasisEval&)>;

  /// m(W; f) = Y f(V), V the features of the evaluated side.
  static MomentFunctional outcome();
  /// m(W; f) = f(V with V[col] = 1) - f(V with V[col] = 0).
  static MomentFunctional ate(int treatment_col);
  /// m(W; f) = weight(W) f(V).
  static MomentFunctional weighted(std::string name, std::function<Eigen::VectorXd(const Dataset&, Side)> weight);
  static MomentFunctional custom(std::string name, Evaluator evaluator);

  MomentKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  Eigen::MatrixXd evaluate(const Dataset& data, const SieveBasis& basis, Side side) const;

  /// Per-record m(W_i; f_c) for f_c = sum_k c_k psi_k.
  Eigen::VectorXd evaluate_function(const Dataset& data, const SieveBasis& basis, Side side,
                                    const Eigen::Ref<const Eigen::VectorXd>& coeffs) const;

 private:
  MomentFunctional(MomentKind kind, std::string name, Evaluator ev)
      : kind_(kind), name_(std::move(name)), evaluator_(std::move(ev)) {}

  MomentKind kind_;
  std::string name_;
  Evaluator evaluator_;
};

/// Column k of B holds the regression coefficients of psi_k(X) on {phi_j(Z)}, so that
/// (T h)(z) = phi(z)^T B c for h = sum_k c_k psi_k.
struct OperatorEstimate {
  Eigen::MatrixXd B;       // J x K
  Eigen::MatrixXd gram_z;  // J x J
  double ridge_stage1 = 0.0;
  SieveBasis basis_x;
  SieveBasis basis_z;
};

struct FitResult {
  Eigen::VectorXd coeffs;
  double lambda = 0.0;
  double empirical_loss = 0.0;
  double norm_penalty = 0.0;  // E_n[h^2] = c^T G c
  std::optional<Eigen::VectorXd> inner_adversary;
};

struct PathEntry {
  double lambda;
  FitResult fit;
};

/// DP search trace; lambda strictly decreasing along entries.
struct RegularizedPath {
  std::vector<PathEntry> entries;

  bool strictly_decreasing() const;
  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

enum class EstimatorKind { Rdiv, Trae };

EstimatorKind parse_estimator_kind(std::string_view name);
std::string to_string(EstimatorKind kind);

/// Anything the discrepancy search can drive: a deterministic fit(lambda) plus the loss it is
/// calibrated on.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual FitResult fit(double lambda) const = 0;
  virtual double loss(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const = 0;
  virtual Eigen::Index sample_size() const = 0;
  virtual std::string label() const = 0;
};

/// Estimators whose penalized objective is loss(c) + lambda c^T G c.
class QuadraticEstimator : public Estimator {
 public:
  virtual EstimatorKind kind() const = 0;
  virtual const Eigen::MatrixXd& penalty_gram() const = 0;
  double objective(const Eigen::Ref<const Eigen::VectorXd>& coeffs, double lambda) const;
};

class RdivEstimator final : public QuadraticEstimator {
 public:
  RdivEstimator(const Dataset& data, const OperatorEstimate& op);

  FitResult fit(double lambda) const override;
  double loss(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const override;
  Eigen::Index sample_size() const override { return y_.size(); }
  std::string label() const override { return "rdiv"; }
  EstimatorKind kind() const override { return EstimatorKind::Rdiv; }
  const Eigen::MatrixXd& penalty_gram() const override { return gram_x_; }

 private:
  Eigen::MatrixXd projected_;  // n x K, Phi B
  Eigen::VectorXd y_;
  Eigen::MatrixXd gram_x_;
};

struct InnerMax {
  Eigen::VectorXd f_coeffs;
  double value;
};

class TraeEstimator final : public QuadraticEstimator {
 public:
  /// h lives on `h_side` with basis_h, the adversary on the opposite side with basis_f, and the
  /// moment is applied to the adversary. ridge_inner defaults to 1e-8 trace(M) / J.
  TraeEstimator(const Dataset& data, const MomentFunctional& moment, const SieveBasis& basis_h,
                const SieveBasis& basis_f, Side h_side, std::optional<double> ridge_inner = std::nullopt);

  FitResult fit(double lambda) const override;
  double loss(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const override;
  Eigen::Index sample_size() const override { return n_; }
  std::string label() const override { return h_side_ == Side::X ? "trae" : "trae_dual"; }
  EstimatorKind kind() const override { return EstimatorKind::Trae; }
  const Eigen::MatrixXd& penalty_gram() const override { return gram_h_; }

  InnerMax inner_max(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const;

  const Eigen::VectorXd& moment_vector() const { return g_; }
  const Eigen::MatrixXd& cross_moment() const { return cross_; }
  const Eigen::MatrixXd& adversary_gram() const { return gram_f_; }
  double ridge_inner() const { return ridge_; }

 private:
  Eigen::Index n_;
  Side h_side_;
  Eigen::VectorXd g_;       // J, E_n[m(W; phi_j)]
  Eigen::MatrixXd cross_;   // J x K, E_n[phi_j psi_k]
  Eigen::MatrixXd gram_f_;  // J x J
  Eigen::MatrixXd gram_h_;  // K x K
  double ridge_;
  Eigen::MatrixXd chol_l_;     // lower Cholesky factor of gram_f + ridge I
  Eigen::MatrixXd whitened_;   // L^{-1} cross
  Eigen::VectorXd whitened_g_; // L^{-1} g
};

OperatorEstimate rdiv_stage1(const Dataset& data, const SieveBasis& basis_x, const SieveBasis& basis_z,
                             double ridge_stage1);
FitResult rdiv_fit(const Dataset& data, const OperatorEstimate& op, double lambda);
double rdiv_loss(const Dataset& data, const OperatorEstimate& op, const Eigen::Ref<const Eigen::VectorXd>& coeffs);

InnerMax trae_inner_max(const Dataset& data, const MomentFunctional& moment, const SieveBasis& basis_h,
                        const SieveBasis& basis_f, const Eigen::Ref<const Eigen::VectorXd>& coeffs_h,
                        std::optional<double> ridge_inner = std::nullopt);
FitResult trae_fit(const Dataset& data, const MomentFunctional& moment, const SieveBasis& basis_h,
                   const SieveBasis& basis_f, double lambda, std::optional<double> ridge_inner = std::nullopt);
/// Dual problem: q on Z with basis_q, adversary s on X with basis_s, moment applied to s.
FitResult trae_dual_fit(const Dataset& data, const MomentFunctional& dual_moment, const SieveBasis& basis_q,
                        const SieveBasis& basis_s, double lambda, std::optional<double> ridge_inner = std::nullopt);

/// Uniform accessor for the DP loop: the loss the estimator is calibrated on.
double loss_of(const Estimator& estimator, const Eigen::Ref<const Eigen::VectorXd>& coeffs);

/// Symmetric PSD solve: pivoted LDLT, falling back to the minimum-norm least-squares solution on
/// rank deficiency. Throws NumericalError on a materially indefinite matrix or non-finite result.
Eigen::VectorXd solve_psd(const Eigen::Ref<const Eigen::MatrixXd>& h, const Eigen::Ref<const Eigen::VectorXd>& b,
                          const char* who);

}  // namespace dpreg
