#include "dpreg/dgp.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

#include "dpreg/rng.hpp"

namespace dpreg {

namespace {

Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = lo + (hi - lo) * uniform01(rng);
  return m;
}

Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) m.col(j) = standard_normal(rng, rows);
  return m;
}

// Symmetric square root (accepts singular PSD matrices, e.g. zero covariances).
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov, const char* name) {
  if (!cov.isApprox(cov.transpose(), 1e-12) && !(cov - cov.transpose()).isZero(1e-14))
    throw std::invalid_argument(std::string("proxy_nc: ") + name + " is not symmetric");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff()))
    throw std::invalid_argument(std::string("proxy_nc: ") + name + " is not positive semidefinite");
  return eig.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

void check_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols)
    throw std::invalid_argument(std::string("proxy_nc: ") + name + " has shape " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
}

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

double cube_root(double x) { return std::cbrt(x); }

ProxyNcParams ProxyNcParams::defaults(std::uint64_t master_seed, int d_s, int d_q, int d_w) {
  if (d_s < 1 || d_q < 1 || d_w < 1) throw std::invalid_argument("proxy_nc: dimensions must be >= 1");
  ProxyNcParams p;
  p.d_s = d_s;
  p.d_q = d_q;
  p.d_w = d_w;
  p.master_seed = master_seed;
  Rng rng(master_seed);
  // Frozen draw order.
  p.mu0 = uniform_matrix(rng, d_w, 1, -0.25, 0.25);
  p.kappa0 = uniform_matrix(rng, d_w, 1, -0.25, 0.25);
  p.mu_s = uniform_matrix(rng, d_s, d_w, -0.25, 0.25);
  p.kappa_s = uniform_matrix(rng, d_s, d_w, -0.25, 0.25);
  p.gamma_w = uniform_matrix(rng, d_w, d_w, -0.25, 0.25);
  p.b_q = uniform_matrix(rng, d_s, d_q, -0.25, 0.25);
  p.c_q = uniform_matrix(rng, d_w, d_q, -0.25, 0.25);
  p.kappa_a = Eigen::VectorXd::Zero(d_w);
  p.sigma_u = 0.25 * Eigen::MatrixXd::Identity(d_w, d_w);
  p.sigma_w = 0.25 * Eigen::MatrixXd::Identity(d_w, d_w);
  p.sigma_q = 0.25 * Eigen::MatrixXd::Identity(d_q, d_q);
  return p;
}

void ProxyNcParams::validate() const {
  if (d_s < 1 || d_q < 1 || d_w < 1) throw std::invalid_argument("proxy_nc: dimensions must be >= 1");
  check_shape(mu0, d_w, 1, "mu0");
  check_shape(kappa0, d_w, 1, "kappa0");
  check_shape(kappa_a, d_w, 1, "kappa_a");
  check_shape(mu_s, d_s, d_w, "mu_s");
  check_shape(kappa_s, d_s, d_w, "kappa_s");
  check_shape(gamma_w, d_w, d_w, "gamma_w");
  check_shape(b_q, d_s, d_q, "b_q");
  check_shape(c_q, d_w, d_q, "c_q");
  check_shape(sigma_u, d_w, d_w, "sigma_u");
  check_shape(sigma_w, d_w, d_w, "sigma_w");
  check_shape(sigma_q, d_q, d_q, "sigma_q");
  psd_sqrt(sigma_u, "sigma_u");
  psd_sqrt(sigma_w, "sigma_w");
  psd_sqrt(sigma_q, "sigma_q");
  if (!(sigma_s2 >= 0.0) || !(sigma_y >= 0.0)) throw std::invalid_argument("proxy_nc: variances must be >= 0");
}

double true_ate(const ProxyNcParams& params) {
  params.validate();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(params.d_w, params.d_w);
  return 1.0 + ((id + params.gamma_w) * params.kappa_a).sum();
}

ProxyNcDraw gen_proxy_nc(const ProxyNcParams& params, Eigen::Index n, std::uint64_t seed, bool emit_latents) {
  params.validate();
  if (n < 1) throw std::invalid_argument("gen_proxy_nc: n must be >= 1");
  const Eigen::MatrixXd lu = psd_sqrt(params.sigma_u, "sigma_u");
  const Eigen::MatrixXd lw = psd_sqrt(params.sigma_w, "sigma_w");
  const Eigen::MatrixXd lq = psd_sqrt(params.sigma_q, "sigma_q");
  const int ds = params.d_s, dq = params.d_q, dw = params.d_w;

  Rng rng(seed);
  const Eigen::MatrixXd s_lat = std::sqrt(params.sigma_s2) * normal_matrix(rng, n, ds);
  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = logistic(params.treat_intercept + params.treat_slope * s_lat.row(i).sum());
    a(i) = uniform01(rng) < p ? 1.0 : 0.0;
  }
  const Eigen::MatrixXd eps_u = normal_matrix(rng, n, dw) * lu;
  const Eigen::MatrixXd eps_w = normal_matrix(rng, n, dw) * lw;
  const Eigen::MatrixXd eps_q = normal_matrix(rng, n, dq) * lq;
  const Eigen::VectorXd eps_y = params.sigma_y * standard_normal(rng, n);

  const Eigen::RowVectorXd ones_q = Eigen::RowVectorXd::Ones(dq);
  Eigen::MatrixXd u = s_lat * params.kappa_s + a * params.kappa_a.transpose() + eps_u;
  u.rowwise() += params.kappa0.transpose();
  Eigen::MatrixXd q_lat = s_lat * params.b_q + a * ones_q + u * params.c_q + eps_q;
  q_lat.array() += 0.2;
  Eigen::MatrixXd w_lat = s_lat * params.mu_s + u * params.gamma_w.transpose() + eps_w;
  w_lat.rowwise() += params.mu0.transpose();
  const Eigen::VectorXd y = a + s_lat.rowwise().sum() + u.rowwise().sum() + w_lat.rowwise().sum() + eps_y;

  auto g = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
    return params.transform == Transform::CubeRoot ? Eigen::MatrixXd(m.unaryExpr(&cube_root)) : m;
  };
  const Eigen::MatrixXd s_obs = g(s_lat), q_obs = g(q_lat), w_obs = g(w_lat);

  ProxyNcDraw out;
  out.theta0 = true_ate(params);
  Dataset& d = out.data;
  d.x.resize(n, 1 + dw + ds);
  d.x << a, w_obs, s_obs;
  d.z.resize(n, 1 + dq + ds);
  d.z << a, q_obs, s_obs;
  d.y = y;
  if (emit_latents) {
    d.extras.resize(n, ds + dw + dw + dq + dw + dw + dq + 1);
    d.extras << s_lat, u, w_lat, q_lat, eps_u, eps_w, eps_q, eps_y;
    auto names = [&](const std::string& stem, int count) {
      for (int j = 0; j < count; ++j) d.extra_names.push_back(stem + "_" + std::to_string(j));
    };
    names("s_lat", ds);
    names("u", dw);
    names("w_lat", dw);
    names("q_lat", dq);
    names("eps_u", dw);
    names("eps_w", dw);
    names("eps_q", dq);
    d.extra_names.push_back("eps_y");
  }
  return out;
}

static std::vector<int> proxy_degrees(int other) {
  std::vector<int> deg(static_cast<std::size_t>(1 + other), 3);
  deg[0] = 1;
  return deg;
}

SieveBasis proxy_nc_basis_x(const ProxyNcParams& params) {
  return SieveBasis::additive(proxy_degrees(params.d_w + params.d_s), kProxyTreatmentCol);
}

SieveBasis proxy_nc_basis_z(const ProxyNcParams& params) {
  return SieveBasis::additive(proxy_degrees(params.d_q + params.d_s), kProxyTreatmentCol);
}

// ---------------------------------------------------------------------------------------------
// NPIV

namespace {

Eigen::VectorXd trig_eval(const Eigen::VectorXd& coeffs, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const SieveBasis basis = SieveBasis::trigonometric(1, static_cast<int>(coeffs.size()));
  return basis.evaluate(x) * coeffs;
}

}  // namespace

NpivParams NpivParams::defaults() {
  NpivParams p;
  p.h0_coeffs.resize(5);
  p.h0_coeffs << 0.5, 1.0, 0.8, 0.3, -0.2;
  return p;
}

void NpivParams::validate() const {
  if (!(decay_p > 0.0)) throw std::invalid_argument("npiv: decay_p must be > 0");
  if (!(strength > 0.0)) throw std::invalid_argument("npiv: strength must be > 0");
  if (modes < 1) throw std::invalid_argument("npiv: modes must be >= 1");
  if (!(endogeneity > -1.0 && endogeneity < 1.0)) throw std::invalid_argument("npiv: endogeneity must lie in (-1, 1)");
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("npiv: noise_sd must be >= 0");
  if (h0_coeffs.size() < 1) throw std::invalid_argument("npiv: h0_coeffs must be nonempty");
  const Eigen::VectorXd s = kernel_sigma();
  for (int g = 0; g <= 2048; ++g) {
    const double u = g / 2048.0;
    double k = 1.0;
    for (int j = 0; j < modes; ++j) k += 2.0 * s(j) * std::cos(2.0 * std::numbers::pi * (j + 1) * u);
    if (k < 0.0) throw std::invalid_argument("npiv: kernel density is negative; lower strength or raise decay_p");
  }
}

Eigen::VectorXd NpivParams::kernel_sigma() const {
  Eigen::VectorXd s(modes);
  for (int j = 0; j < modes; ++j) s(j) = strength * std::pow(j + 1.0, -decay_p);
  return s;
}

Eigen::VectorXd NpivParams::singular_values(int k) const {
  const Eigen::VectorXd s = kernel_sigma();
  Eigen::VectorXd out(k);
  for (int i = 0; i < k; ++i) {
    const int freq = (i + 1) / 2;
    out(i) = (freq == 0 || identity_map) ? 1.0 : (freq <= modes ? s(freq - 1) : 0.0);
  }
  return out;
}

double NpivParams::theta0() const {
  return h0_coeffs(0) + (h0_coeffs.size() > 2 ? functional_gamma * h0_coeffs(2) : 0.0);
}

Eigen::VectorXd NpivParams::h0(const Eigen::Ref<const Eigen::VectorXd>& x) const { return trig_eval(h0_coeffs, x); }

Eigen::VectorXd NpivParams::omega(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return (1.0 + functional_gamma * std::numbers::sqrt2 * (2.0 * std::numbers::pi * x.array()).cos()).matrix();
}

Eigen::VectorXd NpivParams::q0(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  const double s1 = singular_values(3)(2);
  return (1.0 + functional_gamma / s1 * std::numbers::sqrt2 * (2.0 * std::numbers::pi * z.array()).cos()).matrix();
}

NpivDraw gen_npiv(const NpivParams& params, Eigen::Index n, std::uint64_t seed, bool emit_latents) {
  params.validate();
  if (n < 1) throw std::invalid_argument("gen_npiv: n must be >= 1");
  const Eigen::VectorXd s = params.kernel_sigma();
  const double kmax = 1.0 + 2.0 * s.cwiseAbs().sum();
  auto kernel = [&](double u) {
    double k = 1.0;
    for (int j = 0; j < params.modes; ++j) k += 2.0 * s(j) * std::cos(2.0 * std::numbers::pi * (j + 1) * u);
    return k;
  };
  const double s2 = params.modes >= 2 ? s(1) : 0.0;
  const double sd_e = std::sqrt(1.0 + s2 - 2.0 * s(0) * s(0));

  Rng rng(seed);
  Eigen::VectorXd z(n), u(n), x(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = uniform01(rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    double cand;
    do {
      cand = uniform01(rng);
    } while (uniform01(rng) * kmax >= kernel(cand));
    u(i) = cand;
  }
  const Eigen::VectorXd eta = standard_normal(rng, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = z(i) + u(i);
    x(i) = params.identity_map ? z(i) : t - std::floor(t);
  }
  const Eigen::ArrayXd e =
      (std::numbers::sqrt2 * (2.0 * std::numbers::pi * u.array()).cos() - std::numbers::sqrt2 * s(0)) / sd_e;
  const double rho = params.endogeneity;
  const Eigen::VectorXd eps = (rho * e + std::sqrt(1.0 - rho * rho) * eta.array()).matrix();

  NpivDraw out;
  out.theta0 = params.theta0();
  Dataset& d = out.data;
  d.x = x;
  d.z = z;
  d.y = params.h0(x) + params.noise_sd * eps;
  if (emit_latents) {
    d.extras.resize(n, 2);
    d.extras << u, eps;
    d.extra_names = {"u", "eps"};
  }
  return out;
}

MomentFunctional npiv_target_moment(const NpivParams& params) {
  return MomentFunctional::weighted("omega", [params](const Dataset& data, Side side) -> Eigen::VectorXd {
    const Eigen::MatrixXd& v = data.features(side);
    if (v.cols() != 1) throw std::invalid_argument("npiv moment: expected one feature column");
    return params.omega(v.col(0));
  });
}

NpivMetrics npiv_metrics(const NpivParams& params, const SieveBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                         int grid) {
  if (grid < 2 * (params.modes + 1)) throw std::invalid_argument("npiv_metrics: grid too coarse for the kernel modes");
  const Eigen::VectorXd pts = (Eigen::ArrayXd::LinSpaced(grid, 0, grid - 1) + 0.5) / grid;
  const Eigen::VectorXd diff = basis.evaluate(pts) * coeffs - params.h0(pts);
  NpivMetrics m;
  m.strong_sq = diff.squaredNorm() / grid;
  if (params.identity_map) {
    m.weak_sq = m.strong_sq;
    return m;
  }
  const Eigen::VectorXd s = params.kernel_sigma();
  const double c0 = diff.mean();
  double weak = c0 * c0;
  for (int j = 1; j <= params.modes; ++j) {
    const Eigen::ArrayXd arg = 2.0 * std::numbers::pi * j * pts.array();
    const double cs = std::numbers::sqrt2 * (diff.array() * arg.sin()).mean();
    const double cc = std::numbers::sqrt2 * (diff.array() * arg.cos()).mean();
    weak += s(j - 1) * s(j - 1) * (cs * cs + cc * cc);
  }
  m.weak_sq = weak;
  return m;
}

}  // namespace dpreg
