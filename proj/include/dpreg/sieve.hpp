#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace dpreg {

/// Which feature block of a record a function is evaluated on.
enum class Side { X, Z };

inline Side opposite(Side s) { return s == Side::X ? Side::Z : Side::X; }

/// i.i.d. records W_i = (X_i, Z_i, Y_i, extras_i).
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::MatrixXd z;
  Eigen::VectorXd y;
  Eigen::MatrixXd extras;  // n x e, may have zero columns
  std::vector<std::string> extra_names;

  Eigen::Index size() const { return y.size(); }
  const Eigen::MatrixXd& features(Side s) const { return s == Side::X ? x : z; }

  /// Throws std::invalid_argument on inconsistent row counts, n < 2 or non-finite entries.
  void validate() const;

  Dataset subset(std::span<const Eigen::Index> rows) const;

  /// Same records with the X and Z blocks exchanged.
  Dataset swapped() const;
};

enum class BasisKind { Polynomial, Trigonometric, Piecewise, Custom };

/// Finite dictionary {psi_1, ..., psi_K} over R^input_dim with per-function scale factors.
class SieveBasis {
 public:
  using CustomFn = std::function<double(std::span<const double>)>;

  /// All monomials of total degree <= degree, graded order (1, x_1, ..., x_d, x_1^2, x_1 x_2, ...).
  static SieveBasis polynomial(int input_dim, int total_degree);

  /// Intercept, then per-coordinate powers x_j^1..x_j^{degrees[j]}; if treatment_col is set,
  /// products x_t * x_j for every other coordinate j. Binary coordinates should get degree 1.
  static SieveBasis additive(std::vector<int> degrees, std::optional<int> treatment_col = std::nullopt);

  /// Per coordinate: 1, sqrt2 sin(2 pi x), sqrt2 cos(2 pi x), sqrt2 sin(4 pi x), ... truncated to
  /// `count` functions (shared intercept). Orthonormal under the uniform law on [0,1]^d.
  static SieveBasis trigonometric(int input_dim, int count);

  /// Intercept plus per-coordinate bin indicators on [lo, hi] (bins - 1 per coordinate).
  static SieveBasis piecewise(int input_dim, int bins, double lo, double hi);

  static SieveBasis custom(int input_dim, std::vector<CustomFn> functions);

  /// Copy whose functions are rescaled to unit empirical second moment on `reference`.
  SieveBasis normalized(const Eigen::Ref<const Eigen::MatrixXd>& reference) const;

  BasisKind kind() const { return kind_; }
  int size() const { return static_cast<int>(terms_.size()); }
  int input_dim() const { return input_dim_; }
  const Eigen::VectorXd& scales() const { return scales_; }

  /// m x K matrix with entry (i, k) = psi_k(points row i).
  Eigen::MatrixXd evaluate(const Eigen::Ref<const Eigen::MatrixXd>& points) const;

  /// Values of h = sum_k c_k psi_k at the points.
  Eigen::VectorXd evaluate_function(const Eigen::Ref<const Eigen::MatrixXd>& points,
                                    const Eigen::Ref<const Eigen::VectorXd>& coeffs) const;

 private:
  struct Monomial {
    std::vector<int> powers;
  };
  struct Fourier {
    int coord;
    int freq;  // 0 = constant
    bool is_cos;
  };
  struct Indicator {
    int coord;
    double lo, hi;
  };
  using Term = std::variant<Monomial, Fourier, Indicator, CustomFn>;

  SieveBasis(BasisKind kind, int input_dim, std::vector<Term> terms);
  static double eval_term(const Term& t, std::span<const double> p);

  BasisKind kind_;
  int input_dim_;
  std::vector<Term> terms_;
  Eigen::VectorXd scales_;
};

/// (1/n) M^T M.
Eigen::MatrixXd empirical_gram(const Eigen::Ref<const Eigen::MatrixXd>& m);

/// sqrt(c^T G c); throws if the quadratic form is negative beyond round-off (non-PSD Gram).
double empirical_norm(const Eigen::Ref<const Eigen::VectorXd>& coeffs, const Eigen::Ref<const Eigen::MatrixXd>& gram);

/// CSV with header x_0.., z_0.., y, <extras>. Non-numeric cells raise ParseError naming row and column.
Dataset read_dataset_csv(const std::string& path);
Dataset parse_dataset_csv(const std::string& text);
void write_dataset_csv(const Dataset& data, const std::string& path);
std::string format_dataset_csv(const Dataset& data);

}  // namespace dpreg
