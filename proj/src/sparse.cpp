#include "mixsdr/sparse.hpp"
#include <cstdlib>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/SVD>

#include "mixsdr/predictor.hpp"
#include "mixsdr/util.hpp"

namespace mixsdr {

namespace {

int lower_index(int i, int j, int q) {  // i > j, column-major pair order
  return j * (q - 1) - j * (j - 1) / 2 + (i - j - 1);
}

/// Latent-duplicated coordinates: one copy of each group's rows, plus one
/// weight-zero block for rows no group covers.
struct LatentLayout {
  std::vector<PenaltyGroup> groups;  // includes the free block if any
  std::vector<int> offsets;          // row offsets into the latent stack
  int total_rows = 0;
  int max_multiplicity = 1;

  static LatentLayout build(const PenaltySpec& penalty, int nrows) {
    LatentLayout lay;
    lay.groups = penalty.groups;
    std::vector<int> mult(nrows, 0);
    for (const auto& g : lay.groups)
      for (int rw : g.rows) ++mult[rw];
    std::vector<int> free_rows;
    for (int i = 0; i < nrows; ++i)
      if (mult[i] == 0) free_rows.push_back(i);
    if (!free_rows.empty()) {
      lay.groups.push_back({free_rows, 0.0});
      for (int rw : free_rows) mult[rw] = 1;
    }
    lay.offsets.resize(lay.groups.size());
    int off = 0;
    for (size_t g = 0; g < lay.groups.size(); ++g) {
      lay.offsets[g] = off;
      off += static_cast<int>(lay.groups[g].rows.size());
    }
    lay.total_rows = off;
    lay.max_multiplicity = *std::max_element(mult.begin(), mult.end());
    return lay;
  }

  MatrixXd assemble(const MatrixXd& z, int nrows, int d) const {
    MatrixXd C = MatrixXd::Zero(nrows, d);
    for (size_t g = 0; g < groups.size(); ++g)
      for (size_t k = 0; k < groups[g].rows.size(); ++k)
        C.row(groups[g].rows[k]) += z.row(offsets[g] + static_cast<int>(k));
    return C;
  }

  MatrixXd split(const MatrixXd& C) const {
    MatrixXd z(total_rows, C.cols());
    std::vector<int> mult(C.rows(), 0);
    for (const auto& g : groups)
      for (int rw : g.rows) ++mult[rw];
    for (size_t g = 0; g < groups.size(); ++g)
      for (size_t k = 0; k < groups[g].rows.size(); ++k) {
        const int rw = groups[g].rows[k];
        z.row(offsets[g] + static_cast<int>(k)) = C.row(rw) / mult[rw];
      }
    return z;
  }

  MatrixXd scatter_rows(const MatrixXd& G) const {  // gradient rows per copy
    MatrixXd zg(total_rows, G.cols());
    for (size_t g = 0; g < groups.size(); ++g)
      for (size_t k = 0; k < groups[g].rows.size(); ++k)
        zg.row(offsets[g] + static_cast<int>(k)) = G.row(groups[g].rows[k]);
    return zg;
  }

  double penalty_value(const MatrixXd& z, double lambda) const {
    double pen = 0.0;
    for (size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].weight == 0.0) continue;
      pen += groups[g].weight *
             z.middleRows(offsets[g], groups[g].rows.size()).norm();
    }
    return lambda * pen;
  }

  void prox(MatrixXd& z, double thr) const {
    for (size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].weight == 0.0) continue;
      auto block = z.middleRows(offsets[g], groups[g].rows.size());
      const double nz = block.norm();
      const double cut = thr * groups[g].weight;
      if (nz <= cut)
        block.setZero();
      else
        block *= 1.0 - cut / nz;
    }
  }
};

}  // namespace

PenaltySpec PenaltySpec::make(PenaltyKind kind, int p, int q, double gamma) {
  if (kind == PenaltyKind::mixed && (gamma < 0.0 || gamma > 1.0))
    throw std::invalid_argument("PenaltySpec: gamma must lie in [0, 1]");
  PenaltySpec spec;
  spec.kind = kind;
  spec.p = p;
  spec.q = q;
  spec.gamma = gamma;
  const double wx = kind == PenaltyKind::mixed ? gamma : 1.0;
  const double wh = kind == PenaltyKind::mixed ? 1.0 - gamma : 1.0;
  if (kind != PenaltyKind::binary_overlapping)
    for (int j = 0; j < p; ++j) spec.groups.push_back({{j}, wx});
  if (kind != PenaltyKind::continuous_rows)
    for (int v = 0; v < q; ++v) {
      spec.groups.push_back({{p + v}, wh});
      PenaltyGroup inter;
      inter.weight = wh;
      for (int u = 0; u < q; ++u) {
        if (u == v) continue;
        inter.rows.push_back(p + q + lower_index(std::max(u, v), std::min(u, v), q));
      }
      if (!inter.rows.empty()) spec.groups.push_back(std::move(inter));
    }
  return spec;
}

PenaltySpec PenaltySpec::make_vech(int q) {
  PenaltySpec spec;
  spec.kind = PenaltyKind::binary_overlapping;
  spec.p = 0;
  spec.q = q;
  for (int v = 0; v < q; ++v) {
    spec.groups.push_back({{vech_index(v, v, q)}, 1.0});
    PenaltyGroup inter;
    for (int u = 0; u < q; ++u) {
      if (u == v) continue;
      inter.rows.push_back(vech_index(std::max(u, v), std::min(u, v), q));
    }
    if (!inter.rows.empty()) spec.groups.push_back(std::move(inter));
  }
  return spec;
}

double lambda_max(const MatrixXd& bhat, const MatrixXd& Bhat, const PenaltySpec& penalty) {
  const MatrixXd G0 = 2.0 * bhat * Bhat.transpose();  // minus gradient at C = 0
  double lm = 0.0;
  for (const auto& g : penalty.groups) {
    if (g.weight <= 0.0) continue;
    double norm2 = 0.0;
    for (int rw : g.rows) norm2 += G0.row(rw).squaredNorm();
    lm = std::max(lm, std::sqrt(norm2) / g.weight);
  }
  return lm;
}

SolveResult solve_penalized(const MatrixXd& bhat, const MatrixXd& Bhat, double lambda,
                            const PenaltySpec& penalty, const SolveOptions& opts,
                            const MatrixXd* warm) {
  const int nrows = static_cast<int>(bhat.rows());
  const int d = static_cast<int>(Bhat.rows());
  if (Bhat.cols() != bhat.cols())
    throw std::invalid_argument("solve_penalized: shapes of b-hat and B-hat disagree");
  const LatentLayout lay = LatentLayout::build(penalty, nrows);

  const MatrixXd BBt = Bhat * Bhat.transpose();
  const double sigma = Eigen::JacobiSVD<MatrixXd>(BBt).singularValues()(0);
  const double L = std::max(2.0 * sigma * lay.max_multiplicity, 1e-12);
  const double step = 1.0 / L;

  auto objective = [&](const MatrixXd& z, const MatrixXd& C) {
    return (bhat - C * Bhat).squaredNorm() + lay.penalty_value(z, lambda);
  };
  auto grad_z = [&](const MatrixXd& C) {
    return lay.scatter_rows(MatrixXd(2.0 * (C * Bhat - bhat) * Bhat.transpose()));
  };

  MatrixXd x = warm ? lay.split(*warm) : MatrixXd::Zero(lay.total_rows, d);
  MatrixXd Cx = lay.assemble(x, nrows, d);
  double fx = objective(x, Cx);
  MatrixXd yv = x;
  double t = 1.0;

  SolveResult res;
  res.objective_trace.push_back(fx);
  for (int it = 0; it < opts.max_iter; ++it) {
    MatrixXd Cy = lay.assemble(yv, nrows, d);
    MatrixXd znew = yv - step * grad_z(Cy);
    lay.prox(znew, step * lambda);
    MatrixXd Cnew = lay.assemble(znew, nrows, d);
    double fnew = objective(znew, Cnew);
    if (fnew > fx) {
      // Momentum overshot: plain proximal step from x is non-increasing.
      znew = x - step * grad_z(Cx);
      lay.prox(znew, step * lambda);
      Cnew = lay.assemble(znew, nrows, d);
      fnew = objective(znew, Cnew);
      t = 1.0;
      yv = znew;
    } else {
      const double tnext = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      yv = znew + ((t - 1.0) / tnext) * (znew - x);
      t = tnext;
    }
    const double prev = fx;
    x = std::move(znew);
    Cx = std::move(Cnew);
    fx = fnew;
    res.objective_trace.push_back(fx);
    res.iterations = it + 1;
    if (std::abs(prev - fx) <= opts.tol * std::max(1.0, std::abs(prev))) {
      res.converged = true;
      break;
    }
  }
  res.C = lay.assemble(x, nrows, d);
  res.objective = fx;
  return res;
}

std::pair<std::vector<int>, std::vector<int>> selected_variables(const MatrixXd& C, int p,
                                                                 int q, double tol_scale) {
  const int kq = q * (q - 1) / 2;
  if (C.rows() != p + q + kq)
    throw std::invalid_argument("selected_variables: C rows do not match (p, q)");
  double max_norm = 0.0;
  for (int i = 0; i < C.rows(); ++i) max_norm = std::max(max_norm, C.row(i).norm());
  const double tol = tol_scale * max_norm;

  std::vector<int> kept_x, kept_h;
  for (int j = 0; j < p; ++j)
    if (C.row(j).norm() > tol) kept_x.push_back(j);
  for (int v = 0; v < q; ++v) {
    bool active = C.row(p + v).norm() > tol;
    for (int u = 0; u < q && !active; ++u) {
      if (u == v) continue;
      active = C.row(p + q + lower_index(std::max(u, v), std::min(u, v), q)).norm() > tol;
    }
    if (active) kept_h.push_back(v);
  }
  return {kept_x, kept_h};
}


namespace {

/// Everything the cross-validated search needs to know about one penalized
/// factorization problem.
struct SelectionHooks {
  std::function<MatrixXd(const Dataset&, const FyBasis&)> factor;  // fits, returns b-hat
  std::function<MatrixXd(const Dataset&)> stats;                   // statistic rows
  std::function<PenaltySpec(double)> penalty;                      // per gamma
  bool uses_gamma = false;
};

std::vector<double> log_spaced_desc(double lam_max, int count, double ratio) {
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i)
    out[i] = lam_max * std::pow(ratio, static_cast<double>(i) / std::max(count - 1, 1));
  return out;
}

RegPath cv_select_generic(const SelectionHooks& hooks, const Dataset& data,
                          const FyBasis& fy, int d, const CvGrids& grids, int folds,
                          std::uint64_t seed) {
  const int n = data.n();
  if (n < folds) throw std::invalid_argument("cv_select: fewer rows than folds");
  const char* env = std::getenv("MIXSDR_CV_MSE");
  const bool categorical = (env && env[0] == '1') ? false : fy.kind() == FyKind::categorical;

  RegPath path;
  path.folds = folds;
  path.seed = seed;
  path.d = d;
  path.gammas = hooks.uses_gamma ? std::vector<double>(grids.n_gamma)
                                 : std::vector<double>{1.0};
  if (hooks.uses_gamma)
    for (int g = 0; g < grids.n_gamma; ++g)
      path.gammas[g] = static_cast<double>(g) / std::max(grids.n_gamma - 1, 1);

  // Global lambda grid from the full-data factor matrix.
  const MatrixXd bhat_full = hooks.factor(data, fy);
  const SvdParts svd_full = svd_truncate(bhat_full, d);
  double lam_max = 0.0;
  for (double g : path.gammas)
    lam_max = std::max(lam_max, lambda_max(bhat_full, svd_full.B(), hooks.penalty(g)));
  if (lam_max <= 0.0) lam_max = 1.0;
  const std::vector<double> lambdas_desc =
      log_spaced_desc(lam_max, grids.n_lambda, grids.lambda_min_ratio);

  const MatrixXd S_all = hooks.stats(data);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0xF01D));
  std::shuffle(perm.begin(), perm.end(), rng);

  const int n_gamma = static_cast<int>(path.gammas.size());
  const int n_lambda = grids.n_lambda;
  MatrixXd fold_err = MatrixXd::Zero(n_gamma * n_lambda, folds);
  std::vector<std::uint8_t> fold_used(folds, 0);

  for (int f = 0; f < folds; ++f) {
    std::vector<int> train, test;
    for (int i = 0; i < n; ++i) (i % folds == f ? test : train).push_back(perm[i]);
    const Dataset dtrain = data.rows(train);

    bool usable = true;
    for (int j = 0; j < dtrain.q() && usable; ++j) {
      const double first = dtrain.H(0, j);
      bool constant = true;
      for (int i = 1; i < dtrain.n() && constant; ++i) constant = dtrain.H(i, j) == first;
      usable = !constant;
    }
    if (categorical && usable) {
      bool two = false;
      for (int i = 1; i < dtrain.n() && !two; ++i) two = dtrain.y(i) != dtrain.y(0);
      usable = two;
    }
    if (!usable) {
      path.skipped_folds.push_back(f);
      continue;
    }
    fold_used[f] = 1;

    const MatrixXd bhat = hooks.factor(dtrain, fy);
    const SvdParts svd = svd_truncate(bhat, d);
    const MatrixXd Bhat = svd.B();
    const MatrixXd C_init = svd.U1();

    Eigen::RowVectorXd stat_mean = Eigen::RowVectorXd::Zero(S_all.cols());
    for (int i : train) stat_mean += S_all.row(i);
    stat_mean /= static_cast<double>(train.size());

    MatrixXd Ztr_all(train.size(), S_all.cols());
    for (size_t i = 0; i < train.size(); ++i) Ztr_all.row(i) = S_all.row(train[i]) - stat_mean;
    MatrixXd Zte_all(test.size(), S_all.cols());
    for (size_t i = 0; i < test.size(); ++i) Zte_all.row(i) = S_all.row(test[i]) - stat_mean;
    VectorXd ytr(train.size()), yte(test.size());
    for (size_t i = 0; i < train.size(); ++i) ytr(i) = data.y(train[i]);
    for (size_t i = 0; i < test.size(); ++i) yte(i) = data.y(test[i]);

    for (int g = 0; g < n_gamma; ++g) {
      const PenaltySpec penalty = hooks.penalty(path.gammas[g]);
      MatrixXd warm = C_init;
      DownstreamModel prev_model;
      bool have_model = false;
      for (int li = 0; li < n_lambda; ++li) {
        const SolveResult sol =
            solve_penalized(bhat, Bhat, lambdas_desc[li], penalty, {}, &warm);
        warm = sol.C;
        const MatrixXd Ztr = Ztr_all * sol.C;
        const MatrixXd Zte = Zte_all * sol.C;
        DownstreamModel model =
            fit_downstream(Ztr, ytr, categorical, have_model ? &prev_model : nullptr);
        fold_err(g * n_lambda + li, f) = prediction_error(model, Zte, yte);
        prev_model = std::move(model);
        have_model = true;
      }
    }
  }

  const int used = static_cast<int>(std::count(fold_used.begin(), fold_used.end(), 1));
  if (used == 0) throw std::runtime_error("cv_select: every fold was unusable");

  // Minimal mean error; ties prefer the sparser (larger lambda), then the
  // smaller gamma.
  int best_g = 0, best_l = 0;
  double best_mean = std::numeric_limits<double>::infinity();
  path.entries.resize(n_gamma * n_lambda);
  for (int g = 0; g < n_gamma; ++g)
    for (int li = 0; li < n_lambda; ++li) {
      double mean = 0.0, sq = 0.0;
      for (int f = 0; f < folds; ++f)
        if (fold_used[f]) mean += fold_err(g * n_lambda + li, f);
      mean /= used;
      for (int f = 0; f < folds; ++f)
        if (fold_used[f]) {
          const double dlt = fold_err(g * n_lambda + li, f) - mean;
          sq += dlt * dlt;
        }
      RegPathEntry& e = path.entries[g * n_lambda + li];
      e.lambda = lambdas_desc[li];
      e.gamma = path.gammas[g];
      e.cv_mean = mean;
      e.cv_sd = used > 1 ? std::sqrt(sq / (used - 1)) : 0.0;
      const bool better =
          mean < best_mean ||
          (mean == best_mean &&
           (li < best_l || (li == best_l && path.gammas[g] < path.gammas[best_g])));
      if (better) {
        best_mean = mean;
        best_g = g;
        best_l = li;
      }
    }

  // Full-data solutions along the path record the sparsity patterns.
  for (int g = 0; g < n_gamma; ++g) {
    const PenaltySpec penalty = hooks.penalty(path.gammas[g]);
    MatrixXd warm = svd_full.U1();
    for (int li = 0; li < n_lambda; ++li) {
      const SolveResult sol =
          solve_penalized(bhat_full, svd_full.B(), lambdas_desc[li], penalty, {}, &warm);
      warm = sol.C;
      RegPathEntry& e = path.entries[g * n_lambda + li];
      e.zero_rows.resize(sol.C.rows());
      double max_norm = 0.0;
      for (int i = 0; i < sol.C.rows(); ++i)
        max_norm = std::max(max_norm, sol.C.row(i).norm());
      for (int i = 0; i < sol.C.rows(); ++i)
        e.zero_rows[i] = sol.C.row(i).norm() <= 1e-8 * max_norm;
      if (g == best_g && li == best_l) path.C_best = sol.C;
    }
  }

  path.lambda_best = lambdas_desc[best_l];
  path.gamma_best = path.gammas[best_g];
  path.lambdas.assign(lambdas_desc.rbegin(), lambdas_desc.rend());

  // Orthonormal basis of the kept column space (zero rows preserved).
  if (path.C_best.norm() > 0.0) {
    Eigen::JacobiSVD<MatrixXd> svd_c(path.C_best, Eigen::ComputeThinU);
    const VectorXd& s = svd_c.singularValues();
    int rank = 0;
    for (int i = 0; i < s.size(); ++i)
      if (s(i) > 1e-12 * s(0)) ++rank;
    path.alpha = svd_c.matrixU().leftCols(rank);
  } else {
    path.alpha = MatrixXd::Zero(bhat_full.rows(), 0);
  }
  return path;
}

IsingFit fit_ising_or_empty(const Dataset& data, const FyBasis& fy) {
  if (data.q() == 0) return IsingFit{VectorXd(0), MatrixXd(0, fy.r()), true, 0, 0, 0};
  return fit_ising(data, fy);
}

}  // namespace

RegPath cv_select(const Dataset& data, const FyBasis& fy, ReductionKind kind, int d,
                  const CvGrids& grids, int folds, std::uint64_t seed) {
  data.validate();
  const int p = data.p(), q = data.q();
  if (kind == ReductionKind::optimal || kind == ReductionKind::suboptimal) {
    if (q == 0) kind = ReductionKind::pfc;
    if (p == 0) kind = ReductionKind::binary_only;
  }
  if (kind == ReductionKind::suboptimal)
    throw std::invalid_argument("cv_select: use cv_select_suboptimal for the two-block kind");

  SelectionHooks hooks;
  switch (kind) {
    case ReductionKind::optimal:
      hooks.uses_gamma = true;
      hooks.factor = [](const Dataset& d_, const FyBasis& f_) {
        return assemble_b(fit_continuous(d_, f_), fit_ising(d_, f_));
      };
      hooks.stats = [p, q](const Dataset& d_) {
        MatrixXd S(d_.n(), p + q + q * (q - 1) / 2);
        for (int i = 0; i < d_.n(); ++i)
          S.row(i) = stat_t(d_.X.row(i), d_.H.row(i)).transpose();
        return S;
      };
      hooks.penalty = [p, q](double g) {
        return PenaltySpec::make(PenaltyKind::mixed, p, q, g);
      };
      break;
    case ReductionKind::pfc:
      hooks.factor = [](const Dataset& d_, const FyBasis& f_) {
        const ContinuousFit cont = fit_continuous(d_, f_);
        Eigen::LLT<MatrixXd> llt(cont.Delta);
        if (llt.info() != Eigen::Success)
          throw std::domain_error("cv_select: Delta estimate is singular");
        return MatrixXd(llt.solve(cont.A));
      };
      hooks.stats = [](const Dataset& d_) { return d_.X; };
      hooks.penalty = [p](double) {
        return PenaltySpec::make(PenaltyKind::continuous_rows, p, 0);
      };
      break;
    case ReductionKind::binary_only:
      hooks.factor = [q](const Dataset& d_, const FyBasis& f_) {
        const IsingFit ising = fit_ising(d_, f_);
        const int kq = q * (q - 1) / 2;
        MatrixXd b(q + kq, f_.r());
        for (int i = 0; i < q; ++i) b.row(i) = ising.tau.row(vech_index(i, i, q));
        int row = 0;
        for (int j = 0; j < q; ++j)
          for (int i = j + 1; i < q; ++i) b.row(q + row++) = ising.tau.row(vech_index(i, j, q));
        return b;
      };
      hooks.stats = [q](const Dataset& d_) {
        MatrixXd S(d_.n(), q + q * (q - 1) / 2);
        for (int i = 0; i < d_.n(); ++i)
          S.row(i) = stat_s(d_.H.row(i)).transpose();
        return S;
      };
      hooks.penalty = [q](double) {
        return PenaltySpec::make(PenaltyKind::binary_overlapping, 0, q);
      };
      break;
    default:
      throw std::invalid_argument("cv_select: unsupported kind");
  }

  RegPath path = cv_select_generic(hooks, data, fy, d, grids, folds, seed);
  switch (kind) {
    case ReductionKind::optimal: {
      auto [kx, kh] = selected_variables(path.C_best, p, q);
      path.kept_x = std::move(kx);
      path.kept_h = std::move(kh);
      break;
    }
    case ReductionKind::pfc: {
      auto [kx, kh] = selected_variables(path.C_best, p, 0);
      path.kept_x = std::move(kx);
      break;
    }
    case ReductionKind::binary_only: {
      auto [kx, kh] = selected_variables(path.C_best, 0, q);
      path.kept_h = std::move(kh);
      break;
    }
    default:
      break;
  }
  return path;
}

std::pair<RegPath, RegPath> cv_select_suboptimal(const Dataset& data, const FyBasis& fy,
                                                 int d1, int d2, const CvGrids& grids,
                                                 int folds, std::uint64_t seed) {
  data.validate();
  const int p = data.p(), q = data.q();
  if (p == 0 || q == 0)
    throw std::invalid_argument("cv_select_suboptimal: needs both predictor blocks");

  // Continuous block: c1 over (X, H) rows; only the X rows are penalized.
  SelectionHooks h1;
  h1.factor = [](const Dataset& d_, const FyBasis& f_) {
    return assemble_c(fit_continuous(d_, f_), fit_ising(d_, f_)).first;
  };
  h1.stats = [p, q](const Dataset& d_) {
    MatrixXd S(d_.n(), p + q);
    S.leftCols(p) = d_.X;
    S.rightCols(q) = d_.H;
    return S;
  };
  h1.penalty = [p, q](double) {
    PenaltySpec spec = PenaltySpec::make(PenaltyKind::continuous_rows, p, 0);
    spec.q = q;
    return spec;
  };

  // Binary block: c2 = tau over the vech layout.
  SelectionHooks h2;
  h2.factor = [](const Dataset& d_, const FyBasis& f_) { return fit_ising(d_, f_).tau; };
  h2.stats = [q](const Dataset& d_) {
    const int mq = vech_size(q);
    MatrixXd S(d_.n(), mq);
    for (int i = 0; i < d_.n(); ++i)
      for (int b = 0; b < q; ++b)
        for (int a = b; a < q; ++a) S(i, vech_index(a, b, q)) = d_.H(i, a) * d_.H(i, b);
    return S;
  };
  h2.penalty = [q](double) { return PenaltySpec::make_vech(q); };

  RegPath path1 = cv_select_generic(h1, data, fy, d1, grids, folds, derive_seed(seed, 1));
  RegPath path2 = cv_select_generic(h2, data, fy, d2, grids, folds, derive_seed(seed, 2));

  // Kept variables: X from the c1 rows, H from the vech rows of c2.
  double max1 = 0.0;
  for (int i = 0; i < path1.C_best.rows(); ++i)
    max1 = std::max(max1, path1.C_best.row(i).norm());
  for (int j = 0; j < p; ++j)
    if (path1.C_best.row(j).norm() > 1e-8 * max1) path1.kept_x.push_back(j);

  double max2 = 0.0;
  for (int i = 0; i < path2.C_best.rows(); ++i)
    max2 = std::max(max2, path2.C_best.row(i).norm());
  for (int v = 0; v < q; ++v) {
    bool active = path2.C_best.row(vech_index(v, v, q)).norm() > 1e-8 * max2;
    for (int u = 0; u < q && !active; ++u) {
      if (u == v) continue;
      active =
          path2.C_best.row(vech_index(std::max(u, v), std::min(u, v), q)).norm() >
          1e-8 * max2;
    }
    if (active) path2.kept_h.push_back(v);
  }
  return {std::move(path1), std::move(path2)};
}

}  // namespace mixsdr
