#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mixsdr/sparse.hpp"
#include "mixsdr/matops.hpp"
#include "test_util.hpp"

using namespace mixsdr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dataset small_mixed_dataset(int n, int p, int q, int r, std::mt19937_64& rng,
                            double signal = 1.0) {
  Dataset data;
  data.y.resize(n);
  for (int i = 0; i < n; ++i) data.y(i) = 1 + (i % (r + 1));
  data.H.resize(n, q);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < q; ++j) data.H(i, j) = coin(rng) ? 1.0 : 0.0;
  FyBasis fy = FyBasis::categorical(data.y);
  MatrixXd A = signal * testutil::random_matrix(p, 1, rng) *
               testutil::random_matrix(1, r, rng);
  data.X.resize(n, p);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    VectorXd z(p);
    for (int k = 0; k < p; ++k) z(k) = gauss(rng);
    data.X.row(i) = (A * fy.centered(data.y(i)) + z).transpose();
  }
  return data;
}

}  // namespace

TEST_CASE("penalty group construction") {
  const int p = 2, q = 3;
  PenaltySpec spec = PenaltySpec::make(PenaltyKind::mixed, p, q, 0.3);
  // p row groups + per binary variable one main and one interaction group.
  CHECK(spec.groups.size() == static_cast<size_t>(p + 2 * q));
  for (int j = 0; j < p; ++j) {
    CHECK(spec.groups[j].rows == std::vector<int>{j});
    CHECK(spec.groups[j].weight == doctest::Approx(0.3));
  }
  // Union of variable v's two groups covers exactly its main effect row and
  // every interaction row involving v; interaction rows show up in exactly
  // two groups.
  std::vector<int> multiplicity(p + q + q * (q - 1) / 2, 0);
  for (size_t g = p; g < spec.groups.size(); ++g) {
    CHECK(spec.groups[g].weight == doctest::Approx(0.7));
    for (int rw : spec.groups[g].rows) ++multiplicity[rw];
  }
  for (int v = 0; v < q; ++v) CHECK(multiplicity[p + v] == 1);
  for (int k = p + q; k < static_cast<int>(multiplicity.size()); ++k)
    CHECK(multiplicity[k] == 2);

  PenaltySpec vech = PenaltySpec::make_vech(q);
  CHECK(vech.groups.size() == static_cast<size_t>(2 * q));
}

TEST_CASE("lambda_max") {
  std::mt19937_64 rng(9);
  const int m = 5, r = 3, d = 2;
  {
    MatrixXd zero = MatrixXd::Zero(m, r);
    MatrixXd Bhat = testutil::random_matrix(d, r, rng);
    PenaltySpec spec = PenaltySpec::make(PenaltyKind::continuous_rows, m, 0);
    CHECK(lambda_max(zero, Bhat, spec) == 0.0);
  }
  {
    // Single group: the KKT threshold is the gradient norm at zero.
    MatrixXd bhat = testutil::random_matrix(1, r, rng);
    MatrixXd Bhat = testutil::random_matrix(1, r, rng);
    PenaltySpec spec = PenaltySpec::make(PenaltyKind::continuous_rows, 1, 0);
    CHECK(lambda_max(bhat, Bhat, spec) ==
          doctest::Approx((2.0 * bhat * Bhat.transpose()).norm()));
  }
  {
    // Solving just above lambda_max returns the zero solution.
    MatrixXd bhat = testutil::random_matrix(m, r, rng);
    SvdParts svd = svd_truncate(bhat, d);
    PenaltySpec spec = PenaltySpec::make(PenaltyKind::continuous_rows, m, 0);
    const double lm = lambda_max(bhat, svd.B(), spec);
    SolveResult sol = solve_penalized(bhat, svd.B(), 1.01 * lm, spec);
    CHECK(sol.C.norm() == 0.0);
  }
}

TEST_CASE("solve_penalized endpoints and monotonicity") {
  std::mt19937_64 rng(13);
  const int m = 10, r = 4, d = 2;
  MatrixXd bhat = testutil::random_matrix(m, r, rng);
  SvdParts svd = svd_truncate(bhat, d);
  PenaltySpec spec = PenaltySpec::make(PenaltyKind::continuous_rows, m, 0);

  {
    // lambda = 0 recovers the SVD factor's span.
    SolveResult sol = solve_penalized(bhat, svd.B(), 0.0, spec);
    CHECK(sol.converged);
    MatrixXd Pu = projection(svd.U1());
    MatrixXd Pc = projection(sol.C);
    CHECK((Pu - Pc).cwiseAbs().maxCoeff() <= 1e-8);
  }
  {
    const double lm = lambda_max(bhat, svd.B(), spec);
    SolveResult sol = solve_penalized(bhat, svd.B(), lm * 1.0000001, spec);
    CHECK(sol.C.norm() == 0.0);
  }
  {
    const double lm = lambda_max(bhat, svd.B(), spec);
    SolveResult sol = solve_penalized(bhat, svd.B(), 0.3 * lm, spec);
    for (size_t k = 1; k < sol.objective_trace.size(); ++k)
      CHECK(sol.objective_trace[k] <= sol.objective_trace[k - 1] + 1e-12);
  }
}

TEST_CASE("row-separable problem matches the soft-threshold closed form") {
  std::mt19937_64 rng(21);
  const int m = 8, r = 3;
  MatrixXd bhat = testutil::random_matrix(m, r, rng);
  MatrixXd Bhat = testutil::random_matrix(1, r, rng);  // d = 1
  PenaltySpec spec = PenaltySpec::make(PenaltyKind::continuous_rows, m, 0);
  const double lambda = 0.4 * lambda_max(bhat, Bhat, spec);

  SolveResult sol = solve_penalized(bhat, Bhat, lambda, spec, {1e-14, 20000});
  const double bb = Bhat.squaredNorm();
  for (int j = 0; j < m; ++j) {
    const double z = (bhat.row(j) * Bhat.transpose())(0);
    const double mag = std::max(0.0, std::abs(z) - lambda / 2.0);
    const double oracle = (z > 0 ? 1.0 : -1.0) * mag / bb;
    CHECK(std::abs(sol.C(j, 0) - oracle) <= 1e-8);
  }
}

TEST_CASE("overlapping groups force whole-variable removal") {
  std::mt19937_64 rng(27);
  const int q = 4, r = 3, d = 1;
  const int m = q + q * (q - 1) / 2;
  // Signal that involves variables 0 and 1 only.
  MatrixXd bhat = MatrixXd::Zero(m, r);
  bhat.row(0) = testutil::random_matrix(1, r, rng);
  bhat.row(1) = testutil::random_matrix(1, r, rng);
  bhat.row(q + 0) = testutil::random_matrix(1, r, rng);  // pair (1,0)
  bhat.row(2) = 0.01 * testutil::random_matrix(1, r, rng);  // weak variable 2

  SvdParts svd = svd_truncate(bhat, d);
  PenaltySpec spec = PenaltySpec::make(PenaltyKind::binary_overlapping, 0, q);
  const double lm = lambda_max(bhat, svd.B(), spec);
  SolveResult sol = solve_penalized(bhat, svd.B(), 0.5 * lm, spec);
  auto [kept_x, kept_h] = selected_variables(sol.C, 0, q);
  // Variables 2 and 3 have (almost) no signal: every row tied to them must
  // vanish together once their two groups are zeroed.
  for (int v : kept_h) CHECK(v <= 1);
  for (int u = 0; u < q; ++u)
    for (int v = 0; v < u; ++v) {
      if (u <= 1) continue;
      const int row = q + (v * (q - 1) - v * (v - 1) / 2 + (u - v - 1));
      CHECK(sol.C.row(row).norm() <= 1e-10);
    }
}

TEST_CASE("selected_variables") {
  const int p = 3, q = 3;
  const int m = p + q + q * (q - 1) / 2;
  {
    MatrixXd C = MatrixXd::Zero(m, 2);
    auto [kx, kh] = selected_variables(C, p, q);
    CHECK(kx.empty());
    CHECK(kh.empty());
  }
  {
    MatrixXd C = MatrixXd::Zero(m, 2);
    C(1, 0) = 3.0;
    auto [kx, kh] = selected_variables(C, p, q);
    CHECK(kx == std::vector<int>{1});
    CHECK(kh.empty());
  }
  {
    // Random sparsity pattern vs an exhaustive scan.
    std::mt19937_64 rng(33);
    std::bernoulli_distribution coin(0.45);
    MatrixXd C = MatrixXd::Zero(m, 2);
    for (int i = 0; i < m; ++i)
      if (coin(rng)) C.row(i) = testutil::random_matrix(1, 2, rng);
    auto [kx, kh] = selected_variables(C, p, q);

    std::vector<int> ox, oh;
    for (int j = 0; j < p; ++j)
      if (C.row(j).norm() > 0.0) ox.push_back(j);
    for (int v = 0; v < q; ++v) {
      bool active = C.row(p + v).norm() > 0.0;
      int row = p + q;
      for (int b = 0; b < q; ++b)
        for (int a = b + 1; a < q; ++a, ++row)
          if ((a == v || b == v) && C.row(row).norm() > 0.0) active = true;
      if (active) oh.push_back(v);
    }
    CHECK(kx == ox);
    CHECK(kh == oh);
  }
}

TEST_CASE("zero patterns are nested along the path") {
  std::mt19937_64 rng(39);
  Dataset data = small_mixed_dataset(150, 6, 3, 2, rng);
  FyBasis fy = FyBasis::categorical(data.y);
  MatrixXd bhat = assemble_b(fit_continuous(data, fy), fit_ising(data, fy));
  SvdParts svd = svd_truncate(bhat, 1);
  PenaltySpec spec = PenaltySpec::make(PenaltyKind::mixed, 6, 3, 0.5);
  const double lm = lambda_max(bhat, svd.B(), spec);

  const int steps = 40;
  std::vector<std::vector<bool>> patterns;
  MatrixXd warm = svd.U1();
  for (int k = 0; k < steps; ++k) {
    const double lambda = lm * std::pow(1e-3, static_cast<double>(k) / (steps - 1));
    SolveResult sol = solve_penalized(bhat, svd.B(), lambda, spec, {}, &warm);
    warm = sol.C;
    std::vector<bool> pat(sol.C.rows());
    double mx = 0;
    for (int i = 0; i < sol.C.rows(); ++i) mx = std::max(mx, sol.C.row(i).norm());
    for (int i = 0; i < sol.C.rows(); ++i) pat[i] = sol.C.row(i).norm() <= 1e-8 * mx;
    patterns.push_back(std::move(pat));
  }
  int nested = 0;
  for (int k = 1; k < steps; ++k) {
    bool ok = true;  // smaller lambda keeps a subset of the zeros
    for (size_t i = 0; i < patterns[k].size(); ++i)
      if (patterns[k][i] && !patterns[k - 1][i]) ok = false;
    nested += ok;
  }
  CHECK(nested >= static_cast<int>(0.9 * (steps - 1)));
}

TEST_CASE("cv_select is reproducible and handles pure noise") {
  std::mt19937_64 rng(45);
  Dataset data = small_mixed_dataset(90, 4, 2, 2, rng, /*signal=*/1.2);
  FyBasis fy = FyBasis::categorical(data.y);
  CvGrids grids;
  grids.n_lambda = 12;
  grids.n_gamma = 3;

  RegPath a = cv_select(data, fy, ReductionKind::optimal, 1, grids, 5, 777);
  RegPath b = cv_select(data, fy, ReductionKind::optimal, 1, grids, 5, 777);
  CHECK(a.lambda_best == b.lambda_best);
  CHECK(a.gamma_best == b.gamma_best);
  CHECK((a.C_best - b.C_best).norm() == 0.0);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t k = 0; k < a.entries.size(); ++k)
    CHECK(a.entries[k].cv_mean == b.entries[k].cv_mean);

  // Pure noise: the predictors carry no response signal, so the chosen
  // lambda lands high on the grid and most rows vanish (seeded run).
  std::mt19937_64 rng2(45 + 31337);
  Dataset noise;
  noise.y.resize(120);
  for (int i = 0; i < 120; ++i) noise.y(i) = 1 + (i % 3);
  noise.X = testutil::random_matrix(120, 6, rng2);
  noise.H.resize(120, 0);
  FyBasis fy2 = FyBasis::categorical(noise.y);
  CvGrids g2;
  g2.n_lambda = 25;
  RegPath path = cv_select(noise, fy2, ReductionKind::optimal, 1, g2, 5, 31337);
  int zeros = 0;
  double mx = 0;
  for (int i = 0; i < path.C_best.rows(); ++i)
    mx = std::max(mx, path.C_best.row(i).norm());
  for (int i = 0; i < path.C_best.rows(); ++i)
    zeros += path.C_best.row(i).norm() <= 1e-8 * mx || mx == 0.0;
  CHECK(zeros >= static_cast<int>(0.8 * path.C_best.rows()));
  CHECK(path.lambda_best >= path.lambdas[(3 * path.lambdas.size()) / 4]);
}

TEST_CASE("cv_select_suboptimal returns per-block paths") {
  std::mt19937_64 rng(49);
  Dataset data = small_mixed_dataset(120, 4, 3, 2, rng);
  FyBasis fy = FyBasis::categorical(data.y);
  CvGrids grids;
  grids.n_lambda = 8;
  auto [c1path, c2path] = cv_select_suboptimal(data, fy, 1, 1, grids, 5, 31);
  CHECK(c1path.C_best.rows() == 4 + 3);
  CHECK(c2path.C_best.rows() == vech_size(3));
  for (int v : c2path.kept_h) CHECK((v >= 0 && v < 3));
}
