#pragma once

#include <cstdint>
#include <functional>

#include <Eigen/Core>

#include "dpreg/estimators.hpp"
#include "dpreg/sieve.hpp"

namespace dpreg {

enum class Transform { CubeRoot, Identity };

/// Sign-preserving real cube root.
double cube_root(double x);

/// Proxy negative-control design. Shapes: mu0, kappa0, kappa_a (d_w); mu_s, kappa_s (d_s x d_w);
/// gamma_w (d_w x d_w); b_q (d_s x d_q); c_q (d_w x d_q); sigma_u, sigma_w (d_w x d_w); sigma_q (d_q x d_q).
struct ProxyNcParams {
  int d_s = 15;
  int d_q = 15;
  int d_w = 1;
  Eigen::VectorXd mu0, kappa0, kappa_a;
  Eigen::MatrixXd mu_s, kappa_s, gamma_w, b_q, c_q;
  Eigen::MatrixXd sigma_u, sigma_w, sigma_q;
  double sigma_s2 = 0.5;  // Var(S'_j)
  double sigma_y = 1.0;
  double treat_intercept = 0.125;
  double treat_slope = -0.125;
  Transform transform = Transform::CubeRoot;
  std::uint64_t master_seed = 0;

  /// Loadings uniform in [-0.25, 0.25] drawn once from master_seed, covariances 0.25 I, kappa_a = 0.
  static ProxyNcParams defaults(std::uint64_t master_seed, int d_s = 15, int d_q = 15, int d_w = 1);

  /// Throws std::invalid_argument on inconsistent shapes or non-PSD covariances.
  void validate() const;
};

/// theta0 = 1 + 1^T (I + gamma_w) kappa_a.
double true_ate(const ProxyNcParams& params);

struct ProxyNcDraw {
  Dataset data;  // x = (A, W, S), z = (A, Q, S); latents in extras when requested
  double theta0;
};

/// Latent columns (when emit_latents): s'_*, u_*, w'_*, q'_*, eps_u_*, eps_w_*, eps_q_*, eps_y.
ProxyNcDraw gen_proxy_nc(const ProxyNcParams& params, Eigen::Index n, std::uint64_t seed, bool emit_latents = false);

/// Column of A in both X and Z.
inline constexpr int kProxyTreatmentCol = 0;

/// Additive degree-3 bases with treatment interactions (A gets degree 1).
SieveBasis proxy_nc_basis_x(const ProxyNcParams& params);
SieveBasis proxy_nc_basis_z(const ProxyNcParams& params);

/// NPIV design on the circle: Z ~ U[0,1], X = (Z + U) mod 1, U with density
/// 1 + 2 sum_j sigma_j cos(2 pi j u), sigma_j = strength j^{-decay_p}. E[h(X) | Z] is diagonal in
/// the trigonometric basis with singular value sigma_j at frequency j (multiplicity 2).
struct NpivParams {
  double decay_p = 2.0;
  double strength = 0.6;
  int modes = 50;
  Eigen::VectorXd h0_coeffs;  // trig order 1, sin 1, cos 1, sin 2, cos 2, ...
  double endogeneity = 0.5;   // corr(eps, e(U))
  double noise_sd = 0.5;
  double functional_gamma = 0.5;  // omega(x) = 1 + gamma sqrt2 cos(2 pi x)
  bool identity_map = false;      // X = Z

  static NpivParams defaults();
  void validate() const;

  /// sigma_j, j = 1..modes (the kernel of U, also under identity_map).
  Eigen::VectorXd kernel_sigma() const;
  /// Singular values matched to the trigonometric basis of size k (1, sigma_1, sigma_1, sigma_2, ...);
  /// all ones under identity_map.
  Eigen::VectorXd singular_values(int k) const;
  /// theta0 = E[omega(X) h0(X)].
  double theta0() const;
  /// h0 and the dual solution q0 with E[q0(Z) (T h)(Z)] = E[omega(X) h(X)].
  Eigen::VectorXd h0(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd q0(const Eigen::Ref<const Eigen::VectorXd>& z) const;
  Eigen::VectorXd omega(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct NpivDraw {
  Dataset data;  // x, z one column each; extras u (and eps) when requested
  double theta0;
};

NpivDraw gen_npiv(const NpivParams& params, Eigen::Index n, std::uint64_t seed, bool emit_latents = false);

/// m~(W; h) = omega(X) h(X).
MomentFunctional npiv_target_moment(const NpivParams& params);

struct NpivMetrics {
  double strong_sq;  // ||h - h0||^2 under the uniform law
  double weak_sq;    // ||T (h - h0)||^2
};

/// Exact up to trigonometric quadrature on a uniform grid of `grid` points.
NpivMetrics npiv_metrics(const NpivParams& params, const SieveBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                         int grid = 4096);

}  // namespace dpreg
