#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mixsdr/simbench.hpp"
#include "test_util.hpp"

using namespace mixsdr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("scenario construction") {
  {
    Scenario s = make_scenario(ScenarioKind::cont_d1);
    CHECK(s.p == 20);
    CHECK(s.q == 0);
    CHECK(s.d == 1);
    CHECK(s.alpha_true.cols() == 1);
    CHECK(s.irrelevant_x == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    // Mean differences live in span(Delta alpha) = span(A).
    VectorXd alpha = VectorXd::Zero(20);
    alpha.tail(10).setOnes();
    MatrixXd target = s.params.Delta * alpha;
    MatrixXd resid = s.params.A - projection(target) * s.params.A;
    CHECK(resid.cwiseAbs().maxCoeff() <= 1e-10);
  }
  {
    Scenario s = make_scenario(ScenarioKind::bin_d1);
    CHECK(s.q == 10);
    CHECK(s.d == 1);
    CHECK(s.irrelevant_h == std::vector<int>{7, 8, 9});
    // The ragged display entry is symmetrized: pair (7, 6) carries
    // (30 + 0)/2 = 15 before the 3/sqrt(306) scaling.
    const double scale = 3.0 / std::sqrt(306.0);
    CHECK(s.params.tau(vech_index(6, 5, 10), 0) == doctest::Approx(15.0 * scale));
    CHECK(s.params.tau(vech_index(1, 0, 10), 0) == doctest::Approx(30.0 * scale));
    CHECK(s.params.tau(vech_index(6, 6, 10), 0) == doctest::Approx(0.0));
    for (int k = 0; k < 5; ++k)
      CHECK((s.params.tau.col(k) - s.params.tau.col(0)).norm() == 0.0);
  }
  {
    Scenario s = make_scenario(ScenarioKind::bin_d2);
    CHECK(s.d == 2);
    CHECK(numerical_rank(s.params.tau) == 2);
    CHECK(s.params.tau(vech_index(0, 0, 10), 1) ==
          doctest::Approx(12.0 / std::sqrt(6.0)));
  }
  {
    Scenario s = make_scenario(ScenarioKind::mixed_d1);
    CHECK(s.d == 1);
    CHECK(s.d1 == 1);
    CHECK(s.d2 == 1);
    CHECK(s.params.beta.rightCols(4).norm() == 0.0);
    CHECK(s.params.beta(3, 2) == doctest::Approx(0.1));
    CHECK(s.irrelevant_x.size() == 10);
    CHECK(s.irrelevant_h == std::vector<int>{7, 8, 9});
  }
  {
    Scenario s = make_scenario(ScenarioKind::mixed_d2);
    CHECK(s.d == 2);
    CHECK(s.d1 == 2);
    CHECK(s.d2 == 1);
  }
}

TEST_CASE("generators are deterministic in the seed") {
  Scenario s = make_scenario(ScenarioKind::mixed_d1);
  std::mt19937_64 r1(42), r2(42), r3(43);
  Dataset a = gen_scenario(s, 120, r1);
  Dataset b = gen_scenario(s, 120, r2);
  Dataset c = gen_scenario(s, 120, r3);
  CHECK((a.X - b.X).norm() == 0.0);
  CHECK((a.H - b.H).norm() == 0.0);
  CHECK((a.X - c.X).norm() != 0.0);
}

TEST_CASE("continuous generator matches its population covariance") {
  Scenario s = make_scenario(ScenarioKind::cont_d1);
  std::mt19937_64 rng(7);
  const int n = 100002;  // divisible by 6
  Dataset data = gen_scenario(s, n, rng);

  MatrixXd cov_f = MatrixXd::Zero(5, 5);
  const double pi = 1.0 / 6.0;
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) cov_f(a, b) = (a == b ? pi : 0.0) - pi * pi;
  const MatrixXd pop = s.params.Delta + s.params.A * cov_f * s.params.A.transpose();

  MatrixXd Xc = data.X.rowwise() - data.X.colwise().mean();
  MatrixXd emp = Xc.transpose() * Xc / n;
  const double rel = Eigen::JacobiSVD<MatrixXd>(emp - pop).singularValues()(0) /
                     Eigen::JacobiSVD<MatrixXd>(pop).singularValues()(0);
  CHECK(rel <= 0.05);
}

TEST_CASE("binary generator matches the enumerated pairwise margins") {
  Scenario s = make_scenario(ScenarioKind::bin_d1);
  std::mt19937_64 rng(11);
  const int n = 300000;
  Dataset data = gen_scenario(s, n, rng);
  VectorXd y6(6);
  for (int k = 0; k < 6; ++k) y6(k) = k + 1;
  FyBasis fy = FyBasis::categorical(data.y);

  const int q = 10;
  for (int cat = 1; cat <= 6; ++cat) {
    const MatrixXd Gamma = gamma_matrix(s.params.tau0, s.params.tau, fy.centered(cat));
    // Enumerated pairwise margins.
    std::vector<VectorXd> states;
    std::vector<double> pmf;
    for (int st = 0; st < (1 << q); ++st) {
      VectorXd h(q);
      for (int j = 0; j < q; ++j) h(j) = (st >> j) & 1 ? 1.0 : 0.0;
      states.push_back(h);
      pmf.push_back(ising_pmf(h, Gamma));
    }
    std::vector<int> rows;
    for (int i = 0; i < data.n(); ++i)
      if (data.y(i) == cat) rows.push_back(i);

    double worst_tv = 0.0;
    for (int a = 1; a < q; ++a)
      for (int b = 0; b < a; ++b) {
        double cell_pop[4] = {0, 0, 0, 0};
        for (size_t st = 0; st < states.size(); ++st)
          cell_pop[static_cast<int>(states[st](a) + 2 * states[st](b))] += pmf[st];
        double cell_emp[4] = {0, 0, 0, 0};
        for (int i : rows)
          cell_emp[static_cast<int>(data.H(i, a) + 2 * data.H(i, b))] += 1.0 / rows.size();
        double tv = 0.0;
        for (int c = 0; c < 4; ++c) tv += 0.5 * std::abs(cell_pop[c] - cell_emp[c]);
        worst_tv = std::max(worst_tv, tv);
      }
    CHECK(worst_tv <= 0.01);
  }
}

TEST_CASE("mixed generator conditional mean recovery") {
  Scenario s = make_scenario(ScenarioKind::mixed_d1);
  std::mt19937_64 rng(13);
  Dataset data = gen_scenario(s, 100002, rng);
  FyBasis fy = FyBasis::categorical(data.y);
  ContinuousFit fit = fit_continuous(data, fy);
  // "within 2%" of the joint coefficient scale
  const double scale = std::max(s.params.A.cwiseAbs().maxCoeff(),
                                s.params.beta.cwiseAbs().maxCoeff());
  CHECK((fit.A - s.params.A).cwiseAbs().maxCoeff() <= 0.02 * scale);
  CHECK((fit.beta - s.params.beta).cwiseAbs().maxCoeff() <= 0.02 * scale);
}

TEST_CASE("subspace metric equals the principal angle") {
  MatrixXd a = MatrixXd::Zero(4, 1);
  a(0, 0) = 1.0;
  CHECK(metric_subspace(a, a) == 0.0);

  MatrixXd b = MatrixXd::Zero(4, 1);
  b(1, 0) = 1.0;
  CHECK(metric_subspace(a, b) == doctest::Approx(1.0));

  for (double theta : {0.1, 0.45, 1.2}) {
    MatrixXd c = MatrixXd::Zero(4, 1);
    c(0, 0) = std::cos(theta);
    c(1, 0) = std::sin(theta);
    CHECK(std::abs(metric_subspace(c, a) - std::sin(theta)) <= 1e-10);
  }
}

TEST_CASE("prediction metric vanishes when the spans agree") {
  Scenario s = make_scenario(ScenarioKind::cont_d1);
  std::mt19937_64 rng(17);
  CHECK(metric_prediction(s.alpha_true, s.alpha_true, s, ReductionKind::optimal, 500,
                          rng) <= 1e-12);
  // An orthogonal rotation of the basis does not move the span.
  MatrixXd rotated = -s.alpha_true;
  std::mt19937_64 rng2(17);
  CHECK(metric_prediction(rotated, s.alpha_true, s, ReductionKind::optimal, 500, rng2) <=
        1e-12);
}

TEST_CASE("experiment runner rows, aggregates and determinism") {
  ExperimentConfig cfg;
  cfg.scenarios = {ScenarioKind::cont_d1};
  cfg.n_grid = {100, 750};
  cfg.reps = 15;
  cfg.task = TaskKind::estimate;
  cfg.seed = 9001;
  cfg.threads = 2;

  ExperimentResult result = run_experiment(cfg);
  CHECK(result.rows.size() == 30);
  for (const auto& row : result.rows) CHECK(!row.failed);

  auto recomputed = aggregate_rows(cfg, result.rows);
  REQUIRE(recomputed.size() == result.aggregates.size());
  for (size_t k = 0; k < recomputed.size(); ++k) {
    CHECK(recomputed[k].est_mean == result.aggregates[k].est_mean);
    CHECK(recomputed[k].est_median == result.aggregates[k].est_median);
    CHECK(recomputed[k].reps_ok == result.aggregates[k].reps_ok);
  }

  // Error decreases with n.
  double med100 = 0, med750 = 0;
  for (const auto& agg : result.aggregates) {
    if (agg.n == 100) med100 = agg.est_median;
    if (agg.n == 750) med750 = agg.est_median;
  }
  CHECK(med750 < med100);

  ExperimentConfig cfg1 = cfg;
  cfg1.threads = 1;
  ExperimentResult again = run_experiment(cfg1);
  for (size_t k = 0; k < result.rows.size(); ++k) {
    CHECK(again.rows[k].est_error == result.rows[k].est_error);
    CHECK(again.rows[k].pred_error == result.rows[k].pred_error);
  }
}
