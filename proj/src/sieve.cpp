#include "dpreg/sieve.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dpreg {

void Dataset::validate() const {
  const Eigen::Index n = y.size();
  if (n < 2) throw std::invalid_argument("Dataset: need at least 2 records");
  if (x.rows() != n || z.rows() != n) throw std::invalid_argument("Dataset: x, z and y row counts differ");
  if (extras.cols() > 0 && extras.rows() != n) throw std::invalid_argument("Dataset: extras row count differs");
  if (static_cast<Eigen::Index>(extra_names.size()) != extras.cols())
    throw std::invalid_argument("Dataset: extra_names does not match extras columns");
  if (!x.allFinite() || !z.allFinite() || !y.allFinite() || (extras.size() > 0 && !extras.allFinite()))
    throw std::invalid_argument("Dataset: non-finite entry");
}

Dataset Dataset::subset(std::span<const Eigen::Index> rows) const {
  Dataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.x.resize(m, x.cols());
  out.z.resize(m, z.cols());
  out.y.resize(m);
  out.extras.resize(extras.cols() > 0 ? m : 0, extras.cols());
  out.extra_names = extra_names;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= size()) throw std::out_of_range("Dataset::subset: row index out of range");
    out.x.row(i) = x.row(r);
    out.z.row(i) = z.row(r);
    out.y(i) = y(r);
    if (extras.cols() > 0) out.extras.row(i) = extras.row(r);
  }
  return out;
}

Dataset Dataset::swapped() const {
  Dataset out = *this;
  std::swap(out.x, out.z);
  return out;
}

SieveBasis::SieveBasis(BasisKind kind, int input_dim, std::vector<Term> terms)
    : kind_(kind), input_dim_(input_dim), terms_(std::move(terms)) {
  if (input_dim_ < 1) throw std::invalid_argument("SieveBasis: input_dim must be >= 1");
  if (terms_.empty()) throw std::invalid_argument("SieveBasis: need at least one function");
  scales_ = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(terms_.size()));
}

SieveBasis SieveBasis::polynomial(int input_dim, int total_degree) {
  if (total_degree < 0) throw std::invalid_argument("SieveBasis::polynomial: degree must be >= 0");
  std::vector<Term> terms;
  // Enumerate exponent vectors degree by degree; within a degree, lexicographically descending
  // so that x_1^2 precedes x_1 x_2.
  std::vector<int> powers(static_cast<std::size_t>(input_dim), 0);
  for (int deg = 0; deg <= total_degree; ++deg) {
    std::function<void(int, int)> rec = [&](int coord, int remaining) {
      if (coord == input_dim - 1) {
        powers[static_cast<std::size_t>(coord)] = remaining;
        terms.push_back(Monomial{powers});
        return;
      }
      for (int p = remaining; p >= 0; --p) {
        powers[static_cast<std::size_t>(coord)] = p;
        rec(coord + 1, remaining - p);
      }
    };
    rec(0, deg);
  }
  return SieveBasis(BasisKind::Polynomial, input_dim, std::move(terms));
}

SieveBasis SieveBasis::additive(std::vector<int> degrees, std::optional<int> treatment_col) {
  const int d = static_cast<int>(degrees.size());
  if (d < 1) throw std::invalid_argument("SieveBasis::additive: need at least one coordinate");
  if (treatment_col && (*treatment_col < 0 || *treatment_col >= d))
    throw std::invalid_argument("SieveBasis::additive: treatment_col out of range");
  std::vector<Term> terms;
  std::vector<int> zero(static_cast<std::size_t>(d), 0);
  terms.push_back(Monomial{zero});
  for (int j = 0; j < d; ++j) {
    if (degrees[static_cast<std::size_t>(j)] < 0) throw std::invalid_argument("SieveBasis::additive: negative degree");
    for (int p = 1; p <= degrees[static_cast<std::size_t>(j)]; ++p) {
      auto powers = zero;
      powers[static_cast<std::size_t>(j)] = p;
      terms.push_back(Monomial{std::move(powers)});
    }
  }
  if (treatment_col) {
    for (int j = 0; j < d; ++j) {
      if (j == *treatment_col || degrees[static_cast<std::size_t>(j)] == 0) continue;
      auto powers = zero;
      powers[static_cast<std::size_t>(*treatment_col)] = 1;
      powers[static_cast<std::size_t>(j)] = 1;
      terms.push_back(Monomial{std::move(powers)});
    }
  }
  return SieveBasis(BasisKind::Polynomial, d, std::move(terms));
}

SieveBasis SieveBasis::trigonometric(int input_dim, int count) {
  if (count < 1) throw std::invalid_argument("SieveBasis::trigonometric: count must be >= 1");
  std::vector<Term> terms;
  terms.push_back(Fourier{0, 0, true});
  for (int freq = 1; static_cast<int>(terms.size()) < count; ++freq) {
    for (int j = 0; j < input_dim && static_cast<int>(terms.size()) < count; ++j) {
      terms.push_back(Fourier{j, freq, false});
      if (static_cast<int>(terms.size()) < count) terms.push_back(Fourier{j, freq, true});
    }
  }
  return SieveBasis(BasisKind::Trigonometric, input_dim, std::move(terms));
}

SieveBasis SieveBasis::piecewise(int input_dim, int bins, double lo, double hi) {
  if (bins < 1) throw std::invalid_argument("SieveBasis::piecewise: bins must be >= 1");
  if (!(hi > lo)) throw std::invalid_argument("SieveBasis::piecewise: need hi > lo");
  std::vector<Term> terms;
  terms.push_back(Indicator{-1, 0.0, 0.0});
  const double width = (hi - lo) / bins;
  for (int j = 0; j < input_dim; ++j)
    for (int b = 1; b < bins; ++b)
      terms.push_back(Indicator{j, lo + b * width, b + 1 == bins ? std::numeric_limits<double>::infinity() : lo + (b + 1) * width});
  return SieveBasis(BasisKind::Piecewise, input_dim, std::move(terms));
}

SieveBasis SieveBasis::custom(int input_dim, std::vector<CustomFn> functions) {
  std::vector<Term> terms;
  terms.reserve(functions.size());
  for (auto& f : functions) {
    if (!f) throw std::invalid_argument("SieveBasis::custom: empty function");
    terms.emplace_back(std::move(f));
  }
  return SieveBasis(BasisKind::Custom, input_dim, std::move(terms));
}

SieveBasis SieveBasis::normalized(const Eigen::Ref<const Eigen::MatrixXd>& reference) const {
  SieveBasis out = *this;
  out.scales_.setOnes();
  const Eigen::MatrixXd raw = out.evaluate(reference);
  for (Eigen::Index k = 0; k < raw.cols(); ++k) {
    const double second_moment = raw.col(k).squaredNorm() / static_cast<double>(raw.rows());
    out.scales_(k) = second_moment > 0.0 ? 1.0 / std::sqrt(second_moment) : 1.0;
  }
  return out;
}

double SieveBasis::eval_term(const Term& t, std::span<const double> p) {
  return std::visit(
      [&](const auto& term) -> double {
        using T = std::decay_t<decltype(term)>;
        if constexpr (std::is_same_v<T, Monomial>) {
          double v = 1.0;
          for (std::size_t j = 0; j < term.powers.size(); ++j)
            for (int e = 0; e < term.powers[j]; ++e) v *= p[j];
          return v;
        } else if constexpr (std::is_same_v<T, Fourier>) {
          if (term.freq == 0) return 1.0;
          const double arg = 2.0 * std::numbers::pi * term.freq * p[static_cast<std::size_t>(term.coord)];
          return std::numbers::sqrt2 * (term.is_cos ? std::cos(arg) : std::sin(arg));
        } else if constexpr (std::is_same_v<T, Indicator>) {
          if (term.coord < 0) return 1.0;
          const double v = p[static_cast<std::size_t>(term.coord)];
          return (v >= term.lo && v < term.hi) ? 1.0 : 0.0;
        } else {
          return term(p);
        }
      },
      t);
}

Eigen::MatrixXd SieveBasis::evaluate(const Eigen::Ref<const Eigen::MatrixXd>& points) const {
  if (points.cols() != input_dim_)
    throw std::invalid_argument("SieveBasis::evaluate: points have " + std::to_string(points.cols()) +
                                " columns, basis expects " + std::to_string(input_dim_));
  const Eigen::Index m = points.rows();
  const auto k = static_cast<Eigen::Index>(terms_.size());
  Eigen::MatrixXd out(m, k);
  std::vector<double> row(static_cast<std::size_t>(input_dim_));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (int j = 0; j < input_dim_; ++j) row[static_cast<std::size_t>(j)] = points(i, j);
    for (Eigen::Index c = 0; c < k; ++c)
      out(i, c) = scales_(c) * eval_term(terms_[static_cast<std::size_t>(c)], row);
  }
  if (!out.allFinite()) throw std::domain_error("SieveBasis::evaluate: non-finite basis value");
  return out;
}

Eigen::VectorXd SieveBasis::evaluate_function(const Eigen::Ref<const Eigen::MatrixXd>& points,
                                              const Eigen::Ref<const Eigen::VectorXd>& coeffs) const {
  if (coeffs.size() != size()) throw std::invalid_argument("SieveBasis::evaluate_function: coefficient length != K");
  return evaluate(points) * coeffs;
}

Eigen::MatrixXd empirical_gram(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.rows() < 1) throw std::invalid_argument("empirical_gram: need at least one row");
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m.cols(), m.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(m.transpose(), 1.0 / static_cast<double>(m.rows()));
  return g.selfadjointView<Eigen::Lower>();
}

double empirical_norm(const Eigen::Ref<const Eigen::VectorXd>& coeffs, const Eigen::Ref<const Eigen::MatrixXd>& gram) {
  if (gram.rows() != coeffs.size() || gram.cols() != coeffs.size())
    throw std::invalid_argument("empirical_norm: dimension mismatch");
  const double q = coeffs.dot(gram * coeffs);
  const double tol = 1e-12 * std::max(1.0, coeffs.squaredNorm() * gram.diagonal().cwiseAbs().maxCoeff());
  if (q < -tol) throw std::domain_error("empirical_norm: negative quadratic form (Gram not PSD)");
  return std::sqrt(std::max(q, 0.0));
}

}  // namespace dpreg
