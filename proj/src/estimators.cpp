#include "dpreg/estimators.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "dpreg/error.hpp"

namespace dpreg {

// ---------------------------------------------------------------------------------------------
// Moment functionals

MomentFunctional MomentFunctional::outcome() {
  return MomentFunctional(MomentKind::Outcome, "outcome",
                          [](const Dataset& data, Side side, const BasisEval& eval) -> Eigen::MatrixXd {
                            return data.y.asDiagonal() * eval(data.features(side));
                          });
}

MomentFunctional MomentFunctional::ate(int treatment_col) {
  if (treatment_col < 0) throw std::invalid_argument("MomentFunctional::ate: negative treatment column");
  return MomentFunctional(MomentKind::Ate, "ate",
                          [treatment_col](const Dataset& data, Side side, const BasisEval& eval) -> Eigen::MatrixXd {
                            const Eigen::MatrixXd& v = data.features(side);
                            if (treatment_col >= v.cols())
                              throw std::invalid_argument("ate moment: treatment column out of range");
                            Eigen::MatrixXd treated = v, control = v;
                            treated.col(treatment_col).setOnes();
                            control.col(treatment_col).setZero();
                            return eval(treated) - eval(control);
                          });
}

MomentFunctional MomentFunctional::weighted(std::string name,
                                            std::function<Eigen::VectorXd(const Dataset&, Side)> weight) {
  return MomentFunctional(MomentKind::Custom, std::move(name),
                          [w = std::move(weight)](const Dataset& data, Side side, const BasisEval& eval) {
                            const Eigen::VectorXd wt = w(data, side);
                            if (wt.size() != data.size()) throw std::invalid_argument("weighted moment: weight length != n");
                            return Eigen::MatrixXd(wt.asDiagonal() * eval(data.features(side)));
                          });
}

MomentFunctional MomentFunctional::custom(std::string name, Evaluator evaluator) {
  if (!evaluator) throw std::invalid_argument("MomentFunctional::custom: empty evaluator");
  return MomentFunctional(MomentKind::Custom, std::move(name), std::move(evaluator));
}

Eigen::MatrixXd MomentFunctional::evaluate(const Dataset& data, const SieveBasis& basis, Side side) const {
  const BasisEval eval = [&basis](const Eigen::MatrixXd& pts) { return basis.evaluate(pts); };
  Eigen::MatrixXd out = evaluator_(data, side, eval);
  if (out.rows() != data.size() || out.cols() != basis.size())
    throw std::invalid_argument("MomentFunctional '" + name_ + "': evaluator returned wrong shape");
  return out;
}

Eigen::VectorXd MomentFunctional::evaluate_function(const Dataset& data, const SieveBasis& basis, Side side,
                                                    const Eigen::Ref<const Eigen::VectorXd>& coeffs) const {
  if (coeffs.size() != basis.size()) throw std::invalid_argument("MomentFunctional: coefficient length != K");
  return evaluate(data, basis, side) * coeffs;
}

// ---------------------------------------------------------------------------------------------

bool RegularizedPath::strictly_decreasing() const {
  for (std::size_t i = 1; i < entries.size(); ++i)
    if (!(entries[i].lambda < entries[i - 1].lambda)) return false;
  return true;
}

EstimatorKind parse_estimator_kind(std::string_view name) {
  if (name == "rdiv") return EstimatorKind::Rdiv;
  if (name == "trae") return EstimatorKind::Trae;
  throw std::invalid_argument("unknown estimator kind '" + std::string(name) + "' (expected rdiv or trae)");
}

std::string to_string(EstimatorKind kind) { return kind == EstimatorKind::Rdiv ? "rdiv" : "trae"; }

Eigen::VectorXd solve_psd(const Eigen::Ref<const Eigen::MatrixXd>& h, const Eigen::Ref<const Eigen::VectorXd>& b,
                          const char* who) {
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() == Eigen::Success) {
    const Eigen::VectorXd d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (dmax > 0.0 && d.minCoeff() > 1e-12 * dmax) {
      Eigen::VectorXd x = ldlt.solve(b);
      if (x.allFinite()) return x;
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  const double emax = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, emax))
    throw NumericalError(std::string(who) + ": reduced quadratic is not positive semidefinite (min eigenvalue " +
                         std::to_string(eig.eigenvalues().minCoeff()) + ")");
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(h);
  cod.setThreshold(1e-12);
  Eigen::VectorXd x = cod.solve(b);
  if (!x.allFinite()) throw NumericalError(std::string(who) + ": non-finite solution (ill-conditioned design)");
  return x;
}

double QuadraticEstimator::objective(const Eigen::Ref<const Eigen::VectorXd>& coeffs, double lambda) const {
  return loss(coeffs) + lambda * coeffs.dot(penalty_gram() * coeffs);
}

double loss_of(const Estimator& estimator, const Eigen::Ref<const Eigen::VectorXd>& coeffs) {
  return estimator.loss(coeffs);
}

static void check_lambda(double lambda, const char* who) {
  if (!(lambda >= 0.0) || std::isinf(lambda))
    throw std::invalid_argument(std::string(who) + ": lambda must be finite and >= 0");
}

// ---------------------------------------------------------------------------------------------
// RDIV

OperatorEstimate rdiv_stage1(const Dataset& data, const SieveBasis& basis_x, const SieveBasis& basis_z,
                             double ridge_stage1) {
  if (data.size() < 2) throw std::invalid_argument("rdiv_stage1: need n >= 2");
  if (!(ridge_stage1 >= 0.0)) throw std::invalid_argument("rdiv_stage1: ridge_stage1 must be >= 0");
  const double n = static_cast<double>(data.size());
  const Eigen::MatrixXd psi = basis_x.evaluate(data.x);
  const Eigen::MatrixXd phi = basis_z.evaluate(data.z);
  const Eigen::MatrixXd gram_z = empirical_gram(phi);
  Eigen::MatrixXd lhs = gram_z;
  lhs.diagonal().array() += ridge_stage1;
  const Eigen::MatrixXd rhs = phi.transpose() * psi / n;

  const Eigen::LLT<Eigen::MatrixXd> llt(lhs);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lhs, Eigen::EigenvaluesOnly);
  const double emin = eig.eigenvalues().minCoeff();
  const double emax = eig.eigenvalues().maxCoeff();
  if (llt.info() != Eigen::Success || !(emin > 1e-13 * emax))
    throw NumericalError("rdiv_stage1: singular stage-1 normal equations (condition estimate " +
                         std::to_string(emin > 0 ? emax / emin : INFINITY) + "); use ridge_stage1 > 0");
  Eigen::MatrixXd b = llt.solve(rhs);
  if (!b.allFinite()) throw NumericalError("rdiv_stage1: non-finite operator estimate");
  return OperatorEstimate{std::move(b), gram_z, ridge_stage1, basis_x, basis_z};
}

RdivEstimator::RdivEstimator(const Dataset& data, const OperatorEstimate& op) : y_(data.y) {
  const Eigen::MatrixXd phi = op.basis_z.evaluate(data.z);
  if (phi.cols() != op.B.rows()) throw std::invalid_argument("RdivEstimator: operator does not match Z basis");
  projected_ = phi * op.B;
  gram_x_ = empirical_gram(op.basis_x.evaluate(data.x));
}

double RdivEstimator::loss(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const {
  if (coeffs.size() != projected_.cols()) throw std::invalid_argument("rdiv_loss: coefficient length != K");
  return (y_ - projected_ * coeffs).squaredNorm() / static_cast<double>(y_.size());
}

FitResult RdivEstimator::fit(double lambda) const {
  check_lambda(lambda, "rdiv_fit");
  const double n = static_cast<double>(y_.size());
  Eigen::MatrixXd h = empirical_gram(projected_);
  h += lambda * gram_x_;
  const Eigen::VectorXd rhs = projected_.transpose() * y_ / n;
  FitResult out;
  out.coeffs = solve_psd(h, rhs, "rdiv_fit");
  out.lambda = lambda;
  out.empirical_loss = loss(out.coeffs);
  out.norm_penalty = std::max(0.0, out.coeffs.dot(gram_x_ * out.coeffs));
  return out;
}

FitResult rdiv_fit(const Dataset& data, const OperatorEstimate& op, double lambda) {
  return RdivEstimator(data, op).fit(lambda);
}

double rdiv_loss(const Dataset& data, const OperatorEstimate& op, const Eigen::Ref<const Eigen::VectorXd>& coeffs) {
  return RdivEstimator(data, op).loss(coeffs);
}

// ---------------------------------------------------------------------------------------------
// TRAE

TraeEstimator::TraeEstimator(const Dataset& data, const MomentFunctional& moment, const SieveBasis& basis_h,
                             const SieveBasis& basis_f, Side h_side, std::optional<double> ridge_inner)
    : n_(data.size()), h_side_(h_side) {
  if (n_ < 1) throw std::invalid_argument("TraeEstimator: empty dataset");
  const Side f_side = opposite(h_side);
  const double n = static_cast<double>(n_);
  const Eigen::MatrixXd psi = basis_h.evaluate(data.features(h_side));
  const Eigen::MatrixXd phi = basis_f.evaluate(data.features(f_side));
  g_ = moment.evaluate(data, basis_f, f_side).colwise().sum().transpose() / n;
  cross_ = phi.transpose() * psi / n;
  gram_f_ = empirical_gram(phi);
  gram_h_ = empirical_gram(psi);
  const double j = static_cast<double>(gram_f_.rows());
  ridge_ = ridge_inner ? *ridge_inner : 1e-8 * gram_f_.trace() / j;
  if (!(ridge_ >= 0.0)) throw std::invalid_argument("TraeEstimator: ridge_inner must be >= 0");

  Eigen::MatrixXd m = gram_f_;
  m.diagonal().array() += ridge_;
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  const Eigen::VectorXd diag = Eigen::MatrixXd(llt.matrixL()).diagonal();
  if (llt.info() != Eigen::Success || !(diag.minCoeff() > 1e-10 * diag.maxCoeff()))
    throw NumericalError("trae: adversary Gram matrix is singular; use ridge_inner > 0");
  chol_l_ = llt.matrixL();
  whitened_ = llt.matrixL().solve(cross_);
  whitened_g_ = llt.matrixL().solve(g_);
}

InnerMax TraeEstimator::inner_max(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const {
  if (coeffs.size() != cross_.cols()) throw std::invalid_argument("trae_inner_max: coefficient length != K");
  const Eigen::VectorXd resid = g_ - cross_ * coeffs;
  const auto l = chol_l_.triangularView<Eigen::Lower>();
  const Eigen::VectorXd white = l.solve(resid);
  Eigen::VectorXd f = l.transpose().solve(white);
  return InnerMax{std::move(f), white.squaredNorm()};
}

double TraeEstimator::loss(const Eigen::Ref<const Eigen::VectorXd>& coeffs) const {
  if (coeffs.size() != cross_.cols()) throw std::invalid_argument("trae loss: coefficient length != K");
  return (whitened_g_ - whitened_ * coeffs).squaredNorm();
}

FitResult TraeEstimator::fit(double lambda) const {
  check_lambda(lambda, "trae_fit");
  Eigen::MatrixXd h = whitened_.transpose() * whitened_;
  h += lambda * gram_h_;
  const Eigen::VectorXd rhs = whitened_.transpose() * whitened_g_;
  FitResult out;
  out.coeffs = solve_psd(h, rhs, "trae_fit");
  out.lambda = lambda;
  out.empirical_loss = loss(out.coeffs);
  out.norm_penalty = std::max(0.0, out.coeffs.dot(gram_h_ * out.coeffs));
  out.inner_adversary = inner_max(out.coeffs).f_coeffs;
  return out;
}

InnerMax trae_inner_max(const Dataset& data, const MomentFunctional& moment, const SieveBasis& basis_h,
                        const SieveBasis& basis_f, const Eigen::Ref<const Eigen::VectorXd>& coeffs_h,
                        std::optional<double> ridge_inner) {
  return TraeEstimator(data, moment, basis_h, basis_f, Side::X, ridge_inner).inner_max(coeffs_h);
}

FitResult trae_fit(const Dataset& data, const MomentFunctional& moment, const SieveBasis& basis_h,
                   const SieveBasis& basis_f, double lambda, std::optional<double> ridge_inner) {
  return TraeEstimator(data, moment, basis_h, basis_f, Side::X, ridge_inner).fit(lambda);
}

FitResult trae_dual_fit(const Dataset& data, const MomentFunctional& dual_moment, const SieveBasis& basis_q,
                        const SieveBasis& basis_s, double lambda, std::optional<double> ridge_inner) {
  return TraeEstimator(data, dual_moment, basis_q, basis_s, Side::Z, ridge_inner).fit(lambda);
}

}  // namespace dpreg
