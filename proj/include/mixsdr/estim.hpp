#pragma once

#include "mixsdr/dataset.hpp"
#include "mixsdr/model.hpp"

// Maximum-likelihood estimation of the inverse-regression parameters and
// extraction of the sufficient reductions via truncated SVD.

namespace mixsdr {

struct ContinuousFitOptions {
  bool ridge = false;       // stabilize a near-singular design with eps * I
  double ridge_scale = 1e-8;
};

struct ContinuousFit {
  MatrixXd A;          // p x r
  MatrixXd beta;       // p x q
  MatrixXd Delta;      // p x p, MLE divisor n
  MatrixXd residuals;  // n x p, centered X minus fitted values
  VectorXd x_mean, h_mean, f_mean;
};

ContinuousFit fit_continuous(const Dataset& data, const FyBasis& fy,
                             const ContinuousFitOptions& opts = {});

struct IsingFitOptions {
  double tol = 1e-6;  // sup-norm of the mean pseudo-likelihood gradient
  int max_iter = 500;
};

struct IsingFit {
  VectorXd tau0;  // q(q+1)/2
  MatrixXd tau;   // q(q+1)/2 x r
  bool converged = false;
  double pseudo_loglik = 0.0;  // mean per-observation value at the optimum
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Joint maximizer of the sum of the q conditional logistic log-likelihoods,
/// sharing one parameter per unordered pair. Newton with step halving,
/// gradient-ascent fallback on an indefinite step.
IsingFit fit_ising(const Dataset& data, const FyBasis& fy, const IsingFitOptions& opts = {});

/// Mean pseudo-log-likelihood and its gradient at theta = (tau0, vec(tau)).
double ising_pseudo_loglik(const Dataset& data, const FyBasis& fy, const VectorXd& tau0,
                           const MatrixXd& tau);
VectorXd ising_pseudo_grad(const Dataset& data, const FyBasis& fy, const VectorXd& tau0,
                           const MatrixXd& tau);

struct SparseIsingOptions {
  /// Group-lasso level on each interaction pair's (1 + r) coefficients;
  /// negative means the default c * sqrt(log(q(q+1)/2) / n).
  double lambda = -1.0;
  double c = 0.55;
  int max_iter = 2000;
  double tol = 1e-9;
  IsingFitOptions refit;
};

/// Edge-screened pseudo-likelihood: a group penalty on each interaction
/// pair's coefficients selects a support, then the unpenalized joint
/// pseudo-likelihood is re-maximized on that support (main effects always
/// stay). Dropping rows of tau can only reduce the rank of the assembled b,
/// so this stabilizes the rank tests without biasing the kept edges.
IsingFit fit_ising_sparse(const Dataset& data, const FyBasis& fy,
                          const SparseIsingOptions& opts = {});

/// Per-observation pseudo-scores and the mean negative Hessian at a fit,
/// over the support the fit implies (pairs with all-zero coefficients are
/// excluded; main effects always stay). Coordinates are ordered
/// (tau0_active; tau_active columns); active_vech maps them back.
struct IsingScoreParts {
  MatrixXd scores;    // n x dim, mean approximately zero at the fit
  MatrixXd neg_hess;  // dim x dim, positive semidefinite
  std::vector<int> active_vech;
};
IsingScoreParts ising_score_parts(const Dataset& data, const FyBasis& fy,
                                  const IsingFit& fit);

/// Parameter estimates packaged for the natural-parameter map.
MixedModelParams to_model_params(const ContinuousFit& cont, const IsingFit& ising,
                                 int p, int q, int r);

/// b = (Delta^{-1} A; L_q tau - beta^T Delta^{-1} A; J_q tau), m x r.
MatrixXd assemble_b(const ContinuousFit& cont, const IsingFit& ising);

/// c1 = (Delta^{-1} A; -beta^T Delta^{-1} A), c2 = tau.
std::pair<MatrixXd, MatrixXd> assemble_c(const ContinuousFit& cont, const IsingFit& ising);

/// Deterministic full SVD: singular values descending, and each singular
/// vector pair flipped so the largest-magnitude entry of the left vector is
/// positive.
struct SvdParts {
  MatrixXd U;     // m x m
  MatrixXd V;     // r x r
  VectorXd sing;  // min(m, r), descending
  int d = 0;

  MatrixXd U1() const { return U.leftCols(d); }
  MatrixXd U0() const { return U.rightCols(U.cols() - d); }
  MatrixXd R1() const { return V.leftCols(d); }
  MatrixXd R0() const { return V.rightCols(V.cols() - d); }
  /// K1 R1^T, the d x r factor the penalized problem keeps fixed.
  MatrixXd B() const;
  /// Best rank-d approximation U1 K1 R1^T.
  MatrixXd truncated() const;
};

SvdParts svd_truncate(const MatrixXd& M, int d);

enum class ReductionKind { optimal, suboptimal, pfc, binary_only };

struct ReductionModel {
  ReductionKind kind = ReductionKind::optimal;
  int p = 0, q = 0;
  int d = 0;        // total reduction dimension
  int d1 = 0, d2 = 0;  // suboptimal block dimensions
  MatrixXd alpha;      // stat_dim x d, orthonormal columns
  VectorXd sing;       // singular values behind alpha (optimal / pfc / binary)
  VectorXd sing2;      // suboptimal: singular values of the binary block
  VectorXd stat_mean;  // training mean of the relevant statistic
  ContinuousFit cont;
  IsingFit ising;

  int stat_dim() const { return static_cast<int>(alpha.rows()); }
  VectorXd statistic(const VectorXd& x, const VectorXd& h) const;
};

ReductionModel fit_sdr(const Dataset& data, const FyBasis& fy, ReductionKind kind, int d,
                       int d2 = -1);

VectorXd apply_reduction(const ReductionModel& model, const VectorXd& x, const VectorXd& h);
/// Row-wise application over a dataset, n x d.
MatrixXd apply_reduction_all(const ReductionModel& model, const Dataset& data);

}  // namespace mixsdr
