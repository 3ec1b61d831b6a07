#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mixsdr/estim.hpp"

// Asymptotic covariance of the natural-parameter MLE and of vec(b-hat),
// and the two sequential rank tests built on them.

namespace mixsdr {

/// Hessian of psi at eta. The log-det and quadratic pieces are closed form;
/// the log-partition piece combines exact Ising moments with the analytic
/// Jacobian and weighted Hessian of the tilt maps.
MatrixXd psi_hessian(const VectorXd& eta, int p, int q, int cap = kIsingEnumerationCap);

struct VEstimate {
  MatrixXd V;            // pinv of the average information, theta ordering
  bool rank_deficient = false;
  int rank = 0;
  Dims dims;
};

/// V-hat = [ (1/n) sum_i F_{y_i}^T J(eta_{y_i}) F_{y_i} ]^-, Moore-Penrose with a
/// relative eigenvalue cutoff; directions of the information below the cutoff
/// are treated as unidentified and dropped.
VEstimate estimate_V(const Dataset& data, const FyBasis& fy, const MixedModelParams& params,
                     int cap = kIsingEnumerationCap, double pinv_tol = 1e-10);

/// Coordinate selector M with M theta = (theta_{1,1}; theta_{2,1}; theta_{5,1}).
MatrixXd build_M(int p, int q, int r);
/// Permutation W with vec(b) = W M theta.
MatrixXd build_W(int p, int q, int r);
/// W M V M^T W^T without forming the products.
MatrixXd vrcl(const MatrixXd& V, int p, int q, int r);

struct CovarianceEstimates {
  MatrixXd V;
  MatrixXd V_rcl;
  MatrixXd W, M;
  bool rank_deficient = false;
};

CovarianceEstimates covariance_estimates(const Dataset& data, const FyBasis& fy,
                                         const MixedModelParams& params);

/// Delta-method covariances of vec(c1-hat) and vec(c2-hat) for the
/// sub-optimal branches, derived from the same V-hat at the fitted
/// natural-parameter point.
MatrixXd cov_c1(const VEstimate& V, const NaturalParams& np);
MatrixXd cov_c2(const VEstimate& V, const NaturalParams& np);

struct RankTestResult {
  int j = 0;
  double stat = 0.0;
  double critical = 0.0;
  int s = 0;
  bool reject = false;
};

/// Weighted chi-square test of rank(b) = j: the statistic is n times the sum
/// of squared residual singular values, referred to a simulated mixture of
/// chi-square(1) variables weighted by the eigenvalues of Q-hat.
RankTestResult test_rank_weighted(const MatrixXd& bhat, const MatrixXd& Vrcl, int j,
                                  double alpha, int n, std::mt19937_64& rng,
                                  int nsim = 10000, int vrcl_rank = -1);

/// Wald test: n vec(K0)^T Q-hat^+ vec(K0) against chi-square(s). q_pinv_tol
/// is the relative eigenvalue cutoff of the Moore-Penrose inverse of Q-hat.
RankTestResult test_rank_wald(const MatrixXd& bhat, const MatrixXd& Vrcl, int j,
                              double alpha, int n, int vrcl_rank = -1,
                              double q_pinv_tol = 1e-10);

enum class RankTest { weighted_chisq, wald };

struct DimensionTestReport {
  ReductionKind kind = ReductionKind::optimal;
  RankTest test = RankTest::wald;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  bool v_rank_deficient = false;
  // Optimal (or single-block) branch.
  std::vector<RankTestResult> decisions;
  int d = 0;
  bool all_rejected = false;
  // Sub-optimal second branch.
  std::vector<RankTestResult> decisions2;
  int d2 = 0;
  bool all_rejected2 = false;
  bool has_second_branch = false;
};

/// Empirical influence-function (sandwich) covariance of sqrt(n) vec(b-hat)
/// under the actual estimators: OLS blocks for (A, beta, Delta) and the
/// (possibly support-restricted) pseudo-likelihood for tau. This is the
/// covariance the rank tests run on; unlike the inverse information it is
/// valid for the pseudo-likelihood estimator and never inverts weakly
/// identified directions of the full model.
MatrixXd sandwich_vrcl(const Dataset& data, const FyBasis& fy, const ContinuousFit& cont,
                       const IsingFit& ising);

enum class CovarianceRoute { automatic, information, sandwich };

struct DimensionTestOptions {
  /// Which covariance the rank tests run on. The automatic choice takes the
  /// inverse information when the fit is the exact MLE (q = 0) and the
  /// influence-function sandwich when the binary block's pseudo-likelihood
  /// refit is involved.
  CovarianceRoute route = CovarianceRoute::automatic;
  /// Edge-screened pseudo-likelihood for the binary block: the unpenalized
  /// estimator's weakly identified directions otherwise swamp the rank
  /// statistics at bench sample sizes.
  bool screen_binary = true;
  SparseIsingOptions screen;
  /// Information eigenvalue cutoff for the information route.
  double v_pinv_tol = 1e-10;
  /// Same cutoff for the Wald statistic's Q-hat inverse.
  double q_pinv_tol = 1e-6;
};

/// Sequentially tests j = 0, 1, ... and selects the smallest non-rejected
/// rank; falls back to min(r, m), flagged, when every j is rejected. The
/// sub-optimal kind runs the two blocks separately giving (d, d2).
DimensionTestReport select_dimension(const Dataset& data, const FyBasis& fy,
                                     ReductionKind kind, RankTest test, double alpha,
                                     std::uint64_t seed,
                                     const DimensionTestOptions& opts = {});

/// Plug-in asymptotic covariance of sqrt(n) vec(P_alpha-hat - P_alpha).
MatrixXd projection_covariance(const MatrixXd& bhat, const MatrixXd& Vrcl, int d);

double chi_squared_quantile(double prob, int dof);

}  // namespace mixsdr
