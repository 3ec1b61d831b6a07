#pragma once

#include <cstdint>
#include <random>
#include <utility>

#include "mixsdr/dataset.hpp"
#include "mixsdr/matops.hpp"

// Inverse-regression model for mixed predictors: X | (H, Y) is multivariate
// normal with mean linear in (f_Y, H), and H | Y is an Ising model whose
// vech-parameters are linear in f_Y. The joint density is a natural
// exponential family; this module houses both parameterizations.

namespace mixsdr {

/// States enumerated for the Ising normalizer / exact sampler; beyond this
/// the pmf and psi refuse and sampling falls back to Gibbs.
inline constexpr int kIsingEnumerationCap = 20;

/// Block dimension bookkeeping shared by the exponential-family code.
struct Dims {
  int p = 0, q = 0, r = 0;
  int m_p = 0;   // p(p+1)/2
  int m_q = 0;   // q(q+1)/2
  int k_q = 0;   // q(q-1)/2
  int m = 0;     // p + q(q+1)/2, length of stat_t
  // eta blocks: (p, q, m_p, p*q, k_q)
  int n_eta[5] = {0, 0, 0, 0, 0};
  int eta_off[5] = {0, 0, 0, 0, 0};
  int eta_dim = 0;
  // theta blocks: (p + p r, q + q r, m_p, p q, k_q + k_q r)
  int n_theta[5] = {0, 0, 0, 0, 0};
  int theta_off[5] = {0, 0, 0, 0, 0};
  int theta_dim = 0;

  static Dims make(int p, int q, int r);
};

struct MixedModelParams {
  MatrixXd Delta;  // p x p SPD
  VectorXd mu_X;   // p
  VectorXd mu_H;   // q
  MatrixXd A;      // p x r
  MatrixXd beta;   // p x q
  VectorXd tau0;   // q(q+1)/2
  MatrixXd tau;    // q(q+1)/2 x r

  int p() const { return static_cast<int>(Delta.rows()); }
  int q() const { return static_cast<int>(mu_H.size()); }
  int r() const { return static_cast<int>(A.cols()); }
};

/// Natural parameters theta with eta_y = F_y theta (five blocks, the first,
/// second and fifth carrying an intercept and an f_y-linear part).
struct NaturalParams {
  Dims dims;
  VectorXd theta;

  VectorXd eta(const VectorXd& f_centered) const;
  MatrixXd Fy(const VectorXd& f_centered) const;

  Eigen::VectorBlock<const VectorXd> theta_block(int k) const {
    return theta.segment(dims.theta_off[k], dims.n_theta[k]);
  }
};

NaturalParams natural_params(const MixedModelParams& params);

/// Ising natural parameters split into diagonal (main effect) and
/// strict-lower (interaction, vech order) coordinates.
struct IsingParams {
  VectorXd diag;   // q
  VectorXd lower;  // q(q-1)/2
};

/// Gamma_y as a symmetric matrix: vech(Gamma_y) = tau0 + tau f_y.
MatrixXd gamma_matrix(const VectorXd& tau0, const MatrixXd& tau, const VectorXd& f_centered);
IsingParams ising_params_from_gamma(const MatrixXd& Gamma);

double ising_log_partition(const IsingParams& gp, int cap = kIsingEnumerationCap);
double ising_pmf(const Eigen::Ref<const VectorXd>& h, const MatrixXd& Gamma,
                 int cap = kIsingEnumerationCap);

/// Mean and covariance of the Ising sufficient statistic s(H) = (H, J_q
/// vech(H H^T)) under Gamma, by exact enumeration.
struct IsingMoments {
  VectorXd mean;
  MatrixXd cov;
};
IsingMoments ising_moments(const IsingParams& gp, int cap = kIsingEnumerationCap);

struct GibbsOptions {
  int burn_in = 1000;
  int thinning = 10;
};

/// n i.i.d. draws (rows). Exact inverse-CDF when q <= cap, Gibbs otherwise.
MatrixXd ising_sample(const MatrixXd& Gamma, std::mt19937_64& rng, int n,
                      int cap = kIsingEnumerationCap, GibbsOptions gibbs = {});

// Sufficient statistics.
VectorXd stat_t(const VectorXd& x, const VectorXd& h);
VectorXd stat_s(const VectorXd& h);
VectorXd stat_w(const VectorXd& x, const VectorXd& h);
/// Full exponential-family statistic T(X, H) matching eta's block layout.
VectorXd stat_T(const VectorXd& x, const VectorXd& h);

/// Log-partition psi(eta_y); eta3 must unvech to an SPD matrix.
double psi(const VectorXd& eta, int p, int q, int cap = kIsingEnumerationCap);

/// The two routes to the same log density: the factored normal-times-Ising
/// form and the canonical exponential-family form. They agree up to
/// numerical error; tests lean on that.
double log_density_factorized(const VectorXd& x, const VectorXd& h,
                              const MixedModelParams& params, const VectorXd& f_centered,
                              int cap = kIsingEnumerationCap);
double log_density_canonical(const VectorXd& x, const VectorXd& h, const VectorXd& eta,
                             int p, int q, int cap = kIsingEnumerationCap);

}  // namespace mixsdr
