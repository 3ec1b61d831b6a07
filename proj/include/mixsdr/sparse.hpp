#pragma once

#include <cstdint>
#include <vector>

#include "mixsdr/estim.hpp"

// Regularized simultaneous reduction and variable selection: penalized
// refitting of the rank-d factorization of b-hat with row-group,
// overlapping-group or mixed penalties, plus the cross-validated
// hyperparameter search.

namespace mixsdr {

enum class PenaltyKind { continuous_rows, binary_overlapping, mixed };

struct PenaltyGroup {
  std::vector<int> rows;  // rows of C the group covers
  double weight = 1.0;    // zero weight leaves the rows unpenalized
};

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::continuous_rows;
  int p = 0, q = 0;
  double gamma = 0.5;  // mixed only: weight on the continuous part
  std::vector<PenaltyGroup> groups;

  /// Groups over the t-statistic layout (p X rows, q main rows, k_q
  /// interaction rows). Binary variables get a main-effect group and an
  /// interaction group; interaction groups of two variables overlap.
  static PenaltySpec make(PenaltyKind kind, int p, int q, double gamma = 0.5);
  /// Groups over a vech layout (q(q+1)/2 rows), for the sub-optimal binary
  /// block c2 = tau.
  static PenaltySpec make_vech(int q);
};

/// Smallest lambda at which every positive-weight group of the solution of
/// the penalized problem is zero (KKT at C = 0).
double lambda_max(const MatrixXd& bhat, const MatrixXd& Bhat, const PenaltySpec& penalty);

struct SolveOptions {
  double tol = 1e-10;  // relative objective change at exit
  int max_iter = 5000;
};

struct SolveResult {
  MatrixXd C;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  std::vector<double> objective_trace;
};

/// Minimizes ||bhat - C Bhat||_F^2 + lambda * Omega(C) by FISTA on the
/// latent-duplicated coordinates (one copy per overlapping group), with a
/// monotone restart so the objective never increases.
SolveResult solve_penalized(const MatrixXd& bhat, const MatrixXd& Bhat, double lambda,
                            const PenaltySpec& penalty, const SolveOptions& opts = {},
                            const MatrixXd* warm = nullptr);

/// Kept variables at tolerance tol_scale * max row norm: a continuous
/// variable needs its own row, a binary one its main-effect row or any
/// interaction row it takes part in.
std::pair<std::vector<int>, std::vector<int>> selected_variables(const MatrixXd& C, int p,
                                                                 int q,
                                                                 double tol_scale = 1e-8);

struct CvGrids {
  int n_lambda = 100;
  int n_gamma = 11;
  double lambda_min_ratio = 1e-3;
};

struct RegPathEntry {
  double lambda = 0.0;
  double gamma = 0.0;
  double cv_mean = 0.0;
  double cv_sd = 0.0;
  std::vector<std::uint8_t> zero_rows;  // full-data solution pattern
};

struct RegPath {
  std::vector<double> lambdas;  // ascending
  std::vector<double> gammas;
  std::vector<RegPathEntry> entries;
  double lambda_best = 0.0;
  double gamma_best = 0.0;
  MatrixXd C_best;   // full-data solution at the chosen pair
  MatrixXd alpha;    // orthonormalized nonzero-row basis of C_best
  std::vector<int> kept_x, kept_h;
  std::vector<int> skipped_folds;
  int folds = 0;
  std::uint64_t seed = 0;
  int d = 0;
};

/// 10-fold (by default) cross-validated selection over the (lambda, gamma)
/// grid for the optimal reduction (degrading to the single-block kinds when
/// p or q is zero). The downstream predictor is multinomial logistic for a
/// categorical response and linear least squares otherwise.
RegPath cv_select(const Dataset& data, const FyBasis& fy, ReductionKind kind, int d,
                  const CvGrids& grids, int folds, std::uint64_t seed);

/// Sub-optimal selection runs the two blocks separately: continuous rows of
/// c1 with the row penalty, and c2 = tau with the vech-layout overlapping
/// penalty.
std::pair<RegPath, RegPath> cv_select_suboptimal(const Dataset& data, const FyBasis& fy,
                                                 int d1, int d2, const CvGrids& grids,
                                                 int folds, std::uint64_t seed);

}  // namespace mixsdr
