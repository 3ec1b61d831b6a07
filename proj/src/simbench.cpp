#include "mixsdr/simbench.hpp"
#include <numeric>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "mixsdr/util.hpp"

namespace mixsdr {

namespace {

constexpr int kCategories = 6;

/// The banded coupling matrix of the binary scenarios, transcribed row by
/// row (its display is ragged: the (7,6) entry has no (6,7) mirror), then
/// symmetrized as (K + K^T)/2.
MatrixXd coupling_k1() {
  MatrixXd K = MatrixXd::Zero(10, 10);
  const double rows[7][6] = {
      {1, 30, 5, 0, 0, 0},  {30, 1, 10, 0, 0, 0}, {5, 10, 1, 30, 0, 0},
      {0, 0, 30, 1, 30, 0}, {0, 0, 0, 30, 1, 30}, {0, 0, 0, 0, 30, 1},
      {0, 0, 0, 0, 0, 30}};
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 6; ++j) K(i, j) = rows[i][j];
  return 0.5 * (K + K.transpose());
}

double k1_entry_sum() {
  // Sum over the verbatim display; symmetrization preserves it.
  double s = 0.0;
  MatrixXd K = coupling_k1();
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) s += K(i, j);
  return s;
}

MatrixXd tau_from_matrices(const std::vector<MatrixXd>& tau_mats) {
  const int q = static_cast<int>(tau_mats[0].rows());
  MatrixXd tau(vech_size(q), tau_mats.size());
  for (size_t k = 0; k < tau_mats.size(); ++k) tau.col(k) = vech(tau_mats[k]);
  return tau;
}

void continuous_block_d1(Scenario& s) {
  const int p = 20, r = 5;
  VectorXd alpha = VectorXd::Zero(p);
  alpha.tail(p / 2).setOnes();
  s.params.Delta =
      5.0 * (MatrixXd::Identity(p, p) + 0.55 * alpha * alpha.transpose());
  s.params.A = s.params.Delta * alpha * MatrixXd::Ones(1, r);
  s.params.mu_X = VectorXd::Zero(p);
}

void continuous_block_d2(Scenario& s) {
  const int p = 20, r = 5;
  VectorXd v1 = VectorXd::Zero(p), v2 = VectorXd::Zero(p);
  v1.tail(p / 2).setOnes();
  v2.segment(p / 2, p / 4).setOnes();
  v2.tail(p / 4).setConstant(-1.0);
  const VectorXd a1 = v1 / v1.norm(), a2 = v2 / v2.norm();
  s.params.Delta = 5.0 * (MatrixXd::Identity(p, p) + 0.55 * a1 * a1.transpose() +
                          0.25 * a2 * a2.transpose());
  MatrixXd alpha(p, 2);
  alpha << a1, a2;
  MatrixXd xi(2, r);
  xi << 1, 1, 1, 1, 1, 0, 0, 0, 1, 1;
  s.params.A = s.params.Delta * alpha * xi;
  s.params.mu_X = VectorXd::Zero(p);
}

void binary_block(Scenario& s, bool rank2) {
  const int q = 10, r = 5;
  const MatrixXd K1 = coupling_k1();
  const MatrixXd base = 3.0 * K1 / std::sqrt(k1_entry_sum());
  std::vector<MatrixXd> mats(r, base);
  if (rank2) {
    MatrixXd t2 = MatrixXd::Zero(q, q);
    t2.topLeftCorner(6, 6).setIdentity();
    mats[1] = (12.0 / std::sqrt(6.0)) * t2;
  }
  s.params.tau0 = VectorXd::Zero(vech_size(q));
  s.params.tau = tau_from_matrices(mats);
  s.params.mu_H = VectorXd::Zero(q);
}

/// Population b, c1, c2 and the derived spans / irrelevant-variable sets.
void finalize(Scenario& s) {
  const int p = s.p, q = s.q, r = s.r;
  ContinuousFit cont;
  IsingFit ising;
  if (p > 0) {
    cont.A = s.params.A;
    cont.beta = q > 0 ? s.params.beta : MatrixXd(p, 0);
    cont.Delta = s.params.Delta;
  } else {
    cont.A = MatrixXd(0, r);
    cont.beta = MatrixXd(0, q);
  }
  if (q > 0) {
    ising.tau0 = s.params.tau0;
    ising.tau = s.params.tau;
  } else {
    ising.tau0 = VectorXd(0);
    ising.tau = MatrixXd(0, r);
  }
  s.b_true = assemble_b(cont, ising);
  s.alpha_true = orth(s.b_true, 1e-9);
  if (static_cast<int>(s.alpha_true.cols()) != s.d)
    throw std::logic_error("make_scenario: population rank mismatch");
  if (p > 0 && q > 0) {
    auto [c1, c2] = assemble_c(cont, ising);
    s.c1_true = c1;
    s.c2_true = c2;
    const MatrixXd u1 = orth(c1, 1e-9);
    const MatrixXd u2 = orth(c2, 1e-9);
    s.d1 = static_cast<int>(u1.cols());
    s.d2 = static_cast<int>(u2.cols());
    s.alpha_sub_true = MatrixXd::Zero(p + q + vech_size(q), s.d1 + s.d2);
    s.alpha_sub_true.block(0, 0, p + q, s.d1) = u1;
    s.alpha_sub_true.block(p + q, s.d1, vech_size(q), s.d2) = u2;
  }

  const double tol = 1e-12 * s.b_true.cwiseAbs().maxCoeff();
  for (int j = 0; j < p; ++j)
    if (s.b_true.row(j).cwiseAbs().maxCoeff() <= tol) s.irrelevant_x.push_back(j);
  for (int v = 0; v < q; ++v) {
    bool active = s.b_true.row(p + v).cwiseAbs().maxCoeff() > tol;
    int row = p + q;
    for (int b = 0; b < q; ++b)
      for (int a = b + 1; a < q; ++a, ++row)
        if ((a == v || b == v) && s.b_true.row(row).cwiseAbs().maxCoeff() > tol)
          active = true;
    if (!active) s.irrelevant_h.push_back(v);
  }
}

}  // namespace

std::string scenario_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::cont_d1: return "cont-d1";
    case ScenarioKind::cont_d2: return "cont-d2";
    case ScenarioKind::bin_d1: return "bin-d1";
    case ScenarioKind::bin_d2: return "bin-d2";
    case ScenarioKind::mixed_d1: return "mixed-d1";
    case ScenarioKind::mixed_d2: return "mixed-d2";
  }
  return "?";
}

ScenarioKind scenario_from_name(const std::string& name) {
  for (ScenarioKind k : {ScenarioKind::cont_d1, ScenarioKind::cont_d2, ScenarioKind::bin_d1,
                         ScenarioKind::bin_d2, ScenarioKind::mixed_d1, ScenarioKind::mixed_d2})
    if (scenario_name(k) == name) return k;
  throw std::invalid_argument("unknown scenario: " + name);
}

Scenario make_scenario(ScenarioKind kind) {
  Scenario s;
  s.kind = kind;
  s.r = 5;
  switch (kind) {
    case ScenarioKind::cont_d1:
      s.p = 20;
      s.q = 0;
      s.d = 1;
      continuous_block_d1(s);
      s.params.mu_H = VectorXd(0);
      s.params.beta = MatrixXd(s.p, 0);
      s.params.tau0 = VectorXd(0);
      s.params.tau = MatrixXd(0, s.r);
      break;
    case ScenarioKind::cont_d2:
      s.p = 20;
      s.q = 0;
      s.d = 2;
      continuous_block_d2(s);
      s.params.mu_H = VectorXd(0);
      s.params.beta = MatrixXd(s.p, 0);
      s.params.tau0 = VectorXd(0);
      s.params.tau = MatrixXd(0, s.r);
      break;
    case ScenarioKind::bin_d1:
      s.p = 0;
      s.q = 10;
      s.d = 1;
      binary_block(s, false);
      s.params.Delta = MatrixXd(0, 0);
      s.params.mu_X = VectorXd(0);
      s.params.A = MatrixXd::Zero(0, s.r);
      s.params.beta = MatrixXd(0, s.q);
      break;
    case ScenarioKind::bin_d2:
      s.p = 0;
      s.q = 10;
      s.d = 2;
      binary_block(s, true);
      s.params.Delta = MatrixXd(0, 0);
      s.params.mu_X = VectorXd(0);
      s.params.A = MatrixXd::Zero(0, s.r);
      s.params.beta = MatrixXd(0, s.q);
      break;
    case ScenarioKind::mixed_d1:
    case ScenarioKind::mixed_d2:
      s.p = 20;
      s.q = 10;
      s.d = kind == ScenarioKind::mixed_d1 ? 1 : 2;
      if (kind == ScenarioKind::mixed_d1)
        continuous_block_d1(s);
      else
        continuous_block_d2(s);
      binary_block(s, false);
      s.params.beta = MatrixXd::Zero(s.p, s.q);
      s.params.beta.leftCols(6).setConstant(0.1);
      break;
  }
  finalize(s);
  return s;
}

Dataset gen_scenario(const Scenario& s, int n, std::mt19937_64& rng) {
  Dataset data;
  data.y.resize(n);
  for (int i = 0; i < n; ++i) data.y(i) = 1 + (i % kCategories);
  const FyBasis fy = FyBasis::categorical(data.y);

  data.H.resize(n, s.q);
  if (s.q > 0) {
    // Sample category by category from the enumerated Ising law.
    for (int cat = 1; cat <= kCategories; ++cat) {
      std::vector<int> rows;
      for (int i = 0; i < n; ++i)
        if (data.y(i) == cat) rows.push_back(i);
      if (rows.empty()) continue;
      const MatrixXd Gamma =
          gamma_matrix(s.params.tau0, s.params.tau, fy.centered(cat));
      const MatrixXd draws = ising_sample(Gamma, rng, static_cast<int>(rows.size()));
      for (size_t k = 0; k < rows.size(); ++k) data.H.row(rows[k]) = draws.row(k);
    }
  }

  data.X.resize(n, s.p);
  if (s.p > 0) {
    const MatrixXd chol = Eigen::LLT<MatrixXd>(s.params.Delta).matrixL();
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      VectorXd mean = s.params.A * fy.centered(data.y(i));
      if (s.q > 0)
        mean += s.params.beta * (VectorXd(data.H.row(i)) - s.params.mu_H);
      VectorXd z(s.p);
      for (int k = 0; k < s.p; ++k) z(k) = gauss(rng);
      data.X.row(i) = (mean + chol * z).transpose();
    }
  }
  return data;
}

double metric_subspace(const MatrixXd& alpha_hat, const MatrixXd& alpha) {
  const MatrixXd diff = projection(alpha) - projection(alpha_hat);
  if (diff.size() == 0) return 0.0;
  return Eigen::JacobiSVD<MatrixXd>(diff).singularValues()(0);
}

double metric_prediction(const MatrixXd& alpha_hat, const MatrixXd& alpha,
                         const Scenario& s, ReductionKind kind, int N,
                         std::mt19937_64& rng) {
  const Dataset fresh = gen_scenario(s, N, rng);
  const int p = s.p, q = s.q;
  int dim = 0;
  switch (kind) {
    case ReductionKind::optimal: dim = p + q + strict_lower_size(q); break;
    case ReductionKind::suboptimal: dim = p + q + vech_size(q); break;
    case ReductionKind::pfc: dim = p; break;
    case ReductionKind::binary_only: dim = q + strict_lower_size(q); break;
  }
  MatrixXd S(N, dim);
  for (int i = 0; i < N; ++i) {
    const VectorXd x = p > 0 ? VectorXd(fresh.X.row(i)) : VectorXd(0);
    const VectorXd h = q > 0 ? VectorXd(fresh.H.row(i)) : VectorXd(0);
    switch (kind) {
      case ReductionKind::optimal: S.row(i) = stat_t(x, h).transpose(); break;
      case ReductionKind::suboptimal: S.row(i) = stat_w(x, h).transpose(); break;
      case ReductionKind::pfc: S.row(i) = x.transpose(); break;
      case ReductionKind::binary_only: S.row(i) = stat_s(h).transpose(); break;
    }
  }
  S.rowwise() -= S.colwise().mean();
  const MatrixXd Z = S * alpha;
  const MatrixXd Zh = S * alpha_hat;
  MatrixXd joint(N, Z.cols() + Zh.cols());
  joint << Z, Zh;
  const MatrixXd Q = orth(joint, 1e-12);
  if (Q.cols() == 0) return 0.0;
  const MatrixXd Pz = projection(MatrixXd(Q.transpose() * Z), 1e-10);
  const MatrixXd Pzh = projection(MatrixXd(Q.transpose() * Zh), 1e-10);
  return Eigen::JacobiSVD<MatrixXd>(Pz - Pzh).singularValues()(0);
}

namespace {

void run_one_rep(const ExperimentConfig& cfg, const Scenario& scenario, int n, int rep,
                 std::uint64_t seed, ExperimentRow& row) {
  row.seed = seed;
  std::mt19937_64 rng(seed);
  const Dataset data = gen_scenario(scenario, n, rng);
  const FyBasis fy = FyBasis::categorical(data.y);

  switch (cfg.task) {
    case TaskKind::estimate: {
      const bool sub = cfg.reduction == ReductionKind::suboptimal &&
                       scenario.p > 0 && scenario.q > 0;
      const MatrixXd& truth = sub ? scenario.alpha_sub_true : scenario.alpha_true;
      ReductionModel model =
          sub ? fit_sdr(data, fy, ReductionKind::suboptimal, scenario.d1, scenario.d2)
              : fit_sdr(data, fy, ReductionKind::optimal, scenario.d);
      row.est_error = metric_subspace(model.alpha, truth);
      std::mt19937_64 rng_pred(derive_seed(seed, 0xFE));
      row.pred_error =
          metric_prediction(model.alpha, truth, scenario,
                            sub ? ReductionKind::suboptimal : model.kind,
                            cfg.pred_sample, rng_pred);
      break;
    }
    case TaskKind::testdim: {
      const DimensionTestReport report = select_dimension(
          data, fy, cfg.reduction, cfg.test, cfg.alpha, derive_seed(seed, 0xD1));
      row.d_selected = report.d;
      row.d2_selected = report.has_second_branch ? report.d2 : -1;
      if (cfg.reduction == ReductionKind::suboptimal && report.has_second_branch)
        row.d_correct = report.d == scenario.d1 && report.d2 == scenario.d2;
      else
        row.d_correct = report.d == scenario.d;
      break;
    }
    case TaskKind::select: {
      const RegPath path = cv_select(data, fy, ReductionKind::optimal, scenario.d,
                                     cfg.grids, cfg.folds, derive_seed(seed, 0x5E));
      std::vector<std::uint8_t> kept_x(scenario.p, 0), kept_h(scenario.q, 0);
      for (int j : path.kept_x) kept_x[j] = 1;
      for (int v : path.kept_h) kept_h[v] = 1;
      int tp = 0, fn = 0, n_irrel = 0, n_rel = 0;
      for (int j = 0; j < scenario.p; ++j) {
        const bool irrel = std::find(scenario.irrelevant_x.begin(),
                                     scenario.irrelevant_x.end(),
                                     j) != scenario.irrelevant_x.end();
        if (irrel) {
          ++n_irrel;
          tp += !kept_x[j];
        } else {
          ++n_rel;
          fn += !kept_x[j];
        }
      }
      for (int v = 0; v < scenario.q; ++v) {
        const bool irrel = std::find(scenario.irrelevant_h.begin(),
                                     scenario.irrelevant_h.end(),
                                     v) != scenario.irrelevant_h.end();
        if (irrel) {
          ++n_irrel;
          tp += !kept_h[v];
        } else {
          ++n_rel;
          fn += !kept_h[v];
        }
      }
      row.tp_rate = n_irrel > 0 ? static_cast<double>(tp) / n_irrel : 0.0;
      row.fn_rate = n_rel > 0 ? static_cast<double>(fn) / n_rel : 0.0;
      break;
    }
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace

std::vector<ExperimentAggregate> aggregate_rows(const ExperimentConfig& config,
                                                const std::vector<ExperimentRow>& rows) {
  std::vector<ExperimentAggregate> out;
  for (ScenarioKind kind : config.scenarios)
    for (int n : config.n_grid) {
      ExperimentAggregate agg;
      agg.scenario = kind;
      agg.n = n;
      std::vector<double> est, pred;
      int correct = 0, total = 0;
      double tp = 0.0, fn = 0.0;
      for (const ExperimentRow& row : rows) {
        if (row.scenario != kind || row.n != n) continue;
        ++total;
        if (row.failed) continue;
        ++agg.reps_ok;
        est.push_back(row.est_error);
        pred.push_back(row.pred_error);
        correct += row.d_correct;
        tp += row.tp_rate;
        fn += row.fn_rate;
      }
      if (total == 0) continue;
      if (!est.empty()) {
        agg.est_mean = std::accumulate(est.begin(), est.end(), 0.0) / est.size();
        agg.pred_mean = std::accumulate(pred.begin(), pred.end(), 0.0) / pred.size();
        agg.est_median = median_of(est);
        agg.pred_median = median_of(pred);
      }
      // Failed reps count as incorrect / zero rates against the totals.
      agg.prop_correct_d = static_cast<double>(correct) / total;
      agg.tp_mean = agg.reps_ok > 0 ? tp / total : 0.0;
      agg.fn_mean = agg.reps_ok > 0 ? fn / total : 0.0;
      out.push_back(agg);
    }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentResult result;
  result.config = config;

  struct Cell {
    int scen_idx, n, rep;
  };
  std::vector<Cell> cells;
  for (size_t si = 0; si < config.scenarios.size(); ++si)
    for (int n : config.n_grid)
      for (int rep = 0; rep < config.reps; ++rep)
        cells.push_back({static_cast<int>(si), n, rep});

  std::vector<Scenario> scenarios;
  scenarios.reserve(config.scenarios.size());
  for (ScenarioKind kind : config.scenarios) scenarios.push_back(make_scenario(kind));

  result.rows.resize(cells.size());
  parallel_for(
      static_cast<int>(cells.size()),
      [&](int idx) {
        const Cell& cell = cells[idx];
        ExperimentRow& row = result.rows[idx];
        row.scenario = config.scenarios[cell.scen_idx];
        row.n = cell.n;
        row.rep = cell.rep;
        const std::uint64_t seed = derive_seed(config.seed, cell.scen_idx,
                                               static_cast<std::uint64_t>(cell.n),
                                               static_cast<std::uint64_t>(cell.rep));
        try {
          run_one_rep(config, scenarios[cell.scen_idx], cell.n, cell.rep, seed, row);
        } catch (const std::exception& e) {
          row.failed = true;
          row.error = e.what();
        }
      },
      config.threads);

  result.aggregates = aggregate_rows(config, result.rows);
  return result;
}

}  // namespace mixsdr
