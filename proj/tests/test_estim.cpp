#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mixsdr/estim.hpp"
#include "mixsdr/matops.hpp"
#include "test_util.hpp"

using namespace mixsdr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double spectral_norm(const MatrixXd& M) {
  return Eigen::JacobiSVD<MatrixXd>(M).singularValues()(0);
}

/// Scenario: six balanced categories, X | Y = A f_y + noise with the d = 1
/// single-direction structure (p = 20, rho = 0.55).
struct ContD1 {
  int p = 20;
  VectorXd alpha;
  MatrixXd Delta, A, chol;

  ContD1() {
    alpha = VectorXd::Zero(p);
    alpha.tail(p / 2).setOnes();
    Delta = 5.0 * (MatrixXd::Identity(p, p) + 0.55 * alpha * alpha.transpose());
    MatrixXd xi = MatrixXd::Ones(1, 5);
    A = Delta * alpha * xi;
    chol = Eigen::LLT<MatrixXd>(Delta).matrixL();
  }

  Dataset generate(int n, std::mt19937_64& rng) const {
    Dataset data;
    data.y.resize(n);
    for (int i = 0; i < n; ++i) data.y(i) = 1 + (i % 6);
    FyBasis fy = FyBasis::categorical(data.y);
    data.X.resize(n, p);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      VectorXd z(p);
      for (int k = 0; k < p; ++k) z(k) = gauss(rng);
      data.X.row(i) = (A * fy.centered(data.y(i)) + chol * z).transpose();
    }
    data.H.resize(n, 0);
    return data;
  }
};

Dataset ising_dataset(const VectorXd& tau0, const MatrixXd& tau, int n,
                      std::mt19937_64& rng) {
  const int r = static_cast<int>(tau.cols());
  Dataset data;
  data.y.resize(n);
  for (int i = 0; i < n; ++i) data.y(i) = 1 + (i % (r + 1));
  FyBasis fy = FyBasis::categorical(data.y);
  const int q = static_cast<int>(unvech(tau0).rows());
  data.H.resize(n, q);
  for (int i = 0; i < n; ++i) {
    MatrixXd Gamma = gamma_matrix(tau0, tau, fy.centered(data.y(i)));
    data.H.row(i) = ising_sample(Gamma, rng, 1).row(0);
  }
  data.X.resize(n, 0);
  return data;
}

}  // namespace

TEST_CASE("fit_continuous recovers a noiseless linear model") {
  std::mt19937_64 rng(1);
  const int n = 60, p = 3, q = 2, r = 2;
  MatrixXd A = testutil::random_matrix(p, r, rng);
  MatrixXd beta = testutil::random_matrix(p, q, rng);

  Dataset data;
  data.y.resize(n);
  for (int i = 0; i < n; ++i) data.y(i) = 1 + (i % (r + 1));
  data.H.resize(n, q);
  for (int i = 0; i < n; ++i) data.H.row(i) = testutil::random_binary(q, rng).transpose();
  FyBasis fy = FyBasis::categorical(data.y);
  VectorXd h_mean = data.H.colwise().mean();
  data.X.resize(n, p);
  for (int i = 0; i < n; ++i)
    data.X.row(i) = (A * fy.centered(data.y(i)) +
                     beta * (VectorXd(data.H.row(i)) - h_mean))
                        .transpose();

  ContinuousFit fit = fit_continuous(data, fy);
  CHECK((fit.A - A).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((fit.beta - beta).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(fit.Delta.cwiseAbs().maxCoeff() <= 1e-12);
  // fitted + residual reproduces centered X exactly
  MatrixXd Xc = data.X.rowwise() - fit.x_mean.transpose();
  MatrixXd F = fy.centered_matrix(data.y);
  MatrixXd fitted(n, p);
  for (int i = 0; i < n; ++i)
    fitted.row(i) = (fit.A * F.row(i).transpose() +
                     fit.beta * (VectorXd(data.H.row(i)) - fit.h_mean))
                        .transpose();
  CHECK((Xc - fitted - fit.residuals).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("fit_continuous equals the normal equations and tightens with n") {
  std::mt19937_64 rng(2);
  const int p = 4, q = 2, r = 2;
  MatrixXd A = testutil::random_matrix(p, r, rng);
  MatrixXd beta = testutil::random_matrix(p, q, rng);
  MatrixXd Delta = testutil::random_spd(p, rng);
  MatrixXd chol = Eigen::LLT<MatrixXd>(Delta).matrixL();

  auto gen = [&](int n) {
    Dataset data;
    data.y.resize(n);
    for (int i = 0; i < n; ++i) data.y(i) = 1 + (i % (r + 1));
    data.H.resize(n, q);
    std::bernoulli_distribution coin(0.4);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < q; ++j) data.H(i, j) = coin(rng) ? 1.0 : 0.0;
    FyBasis fy = FyBasis::categorical(data.y);
    std::normal_distribution<double> gauss(0.0, 1.0);
    data.X.resize(n, p);
    for (int i = 0; i < n; ++i) {
      VectorXd z(p);
      for (int k = 0; k < p; ++k) z(k) = gauss(rng);
      data.X.row(i) =
          (A * fy.centered(data.y(i)) + beta * VectorXd(data.H.row(i)) + chol * z)
              .transpose();
    }
    return data;
  };

  double err50 = 0.0, err200 = 0.0;
  for (int pass = 0; pass < 2; ++pass) {
    const int n = pass == 0 ? 50 : 200;
    Dataset data = gen(n);
    FyBasis fy = FyBasis::categorical(data.y);
    ContinuousFit fit = fit_continuous(data, fy);

    // Independent normal-equations oracle via the pseudoinverse of the
    // stacked centered design.
    MatrixXd L(n, r + q);
    L.leftCols(r) = fy.centered_matrix(data.y);
    L.rightCols(q) = data.H.rowwise() - data.H.colwise().mean();
    MatrixXd Xc = data.X.rowwise() - data.X.colwise().mean();
    MatrixXd coefs = pinv(L) * Xc;  // (r+q) x p
    CHECK((fit.A - coefs.topRows(r).transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((fit.beta - coefs.bottomRows(q).transpose()).cwiseAbs().maxCoeff() <= 1e-10);

    (pass == 0 ? err50 : err200) = (fit.A - A).norm();
  }
  CHECK(err200 < err50);
}

TEST_CASE("fit_continuous handles q = 0 and flags rank deficiency") {
  std::mt19937_64 rng(3);
  ContD1 scen;
  Dataset data = scen.generate(120, rng);
  FyBasis fy = FyBasis::categorical(data.y);
  ContinuousFit fit = fit_continuous(data, fy);
  CHECK(fit.beta.cols() == 0);
  CHECK(fit.A.rows() == 20);

  // Duplicated column in H makes the design rank-deficient.
  Dataset bad = data;
  bad.H.resize(data.n(), 2);
  for (int i = 0; i < data.n(); ++i) {
    bad.H(i, 0) = i % 2;
    bad.H(i, 1) = i % 2;
  }
  CHECK_THROWS_AS(fit_continuous(bad, fy), std::runtime_error);
  ContinuousFitOptions ridge;
  ridge.ridge = true;
  CHECK_NOTHROW(fit_continuous(bad, fy, ridge));
}

TEST_CASE("fit_ising intercept-only and null-truth behaviour") {
  std::mt19937_64 rng(41);
  {
    // q = 1, H independent of y with mean 1/2: tau0 is the logit.
    const int n = 500;
    Dataset data;
    data.y.resize(n);
    for (int i = 0; i < n; ++i) data.y(i) = i % 2;
    data.H.resize(n, 1);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < n; ++i) data.H(i, 0) = coin(rng) ? 1.0 : 0.0;
    data.X.resize(n, 0);
    FyBasis fy = FyBasis::categorical(data.y);
    IsingFit fit = fit_ising(data, fy);
    CHECK(fit.converged);
    CHECK(std::abs(fit.tau0(0)) <= 0.1);
  }
  {
    // tau = 0 truth: gradient at the truth is within sampling noise and the
    // fitted interaction parameters shrink toward zero.
    const int n = 1000, q = 2, r = 1;
    VectorXd tau0 = VectorXd::Zero(vech_size(q));
    MatrixXd tau = MatrixXd::Zero(vech_size(q), r);
    Dataset data = ising_dataset(tau0, tau, n, rng);
    FyBasis fy = FyBasis::categorical(data.y);
    VectorXd g = ising_pseudo_grad(data, fy, tau0, tau);
    CHECK(g.cwiseAbs().maxCoeff() <= 0.08);
    IsingFit fit = fit_ising(data, fy);
    CHECK(fit.converged);
    CHECK(fit.grad_norm <= 1e-6);
    CHECK(fit.tau.cwiseAbs().maxCoeff() <= 0.5);
  }
  {
    // Constant column is reported by name.
    Dataset data;
    data.y.resize(10);
    for (int i = 0; i < 10; ++i) data.y(i) = i % 2;
    data.H = MatrixXd::Zero(10, 2);
    for (int i = 0; i < 10; ++i) data.H(i, 0) = i % 2;
    data.X.resize(10, 0);
    FyBasis fy = FyBasis::categorical(data.y);
    CHECK_THROWS_WITH_AS(fit_ising(data, fy),
                         "fit_ising: H column 1 is constant in the sample",
                         std::invalid_argument);
  }
}

TEST_CASE("fit_ising recovers known parameters across seeded replications") {
  const int q = 2, r = 1, n = 2000, reps = 100;
  VectorXd tau0(vech_size(q));
  tau0 << 0.2, -0.4, 0.1;
  MatrixXd tau(vech_size(q), r);
  tau << 0.6, 0.3, -0.5;
  const VectorXd truth = [&] {
    VectorXd t(tau0.size() + tau.size());
    t << tau0, Eigen::Map<const VectorXd>(tau.data(), tau.size());
    return t;
  }();

  MatrixXd estimates(reps, truth.size());
  for (int rep = 0; rep < reps; ++rep) {
    std::mt19937_64 rng(9000 + rep);
    Dataset data = ising_dataset(tau0, tau, n, rng);
    FyBasis fy = FyBasis::categorical(data.y);
    IsingFit fit = fit_ising(data, fy);
    estimates.row(rep).head(tau0.size()) = fit.tau0.transpose();
    estimates.row(rep).tail(tau.size()) =
        Eigen::Map<const VectorXd>(fit.tau.data(), tau.size()).transpose();
  }
  // Repeated-simulation oracle: the spread of the estimator across reps is
  // the reference scale; each rep should sit within 3 of those units.
  VectorXd sd(truth.size());
  for (int k = 0; k < truth.size(); ++k) {
    const double mu = estimates.col(k).mean();
    sd(k) = std::sqrt((estimates.col(k).array() - mu).square().mean());
  }
  int good = 0;
  for (int rep = 0; rep < reps; ++rep) {
    bool ok = true;
    for (int k = 0; k < truth.size(); ++k)
      ok = ok && std::abs(estimates(rep, k) - truth(k)) <= 3.0 * sd(k);
    good += ok;
  }
  CHECK(good >= 95);
}

TEST_CASE("pseudo-likelihood gradient matches central finite differences") {
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<int> pick_q(1, 5), pick_r(1, 3);
  for (int inst = 0; inst < 20; ++inst) {
    const int q = pick_q(rng), r = pick_r(rng);
    VectorXd tau0 = testutil::random_vector(vech_size(q), rng, 0.4);
    MatrixXd tau = testutil::random_matrix(vech_size(q), r, rng, 0.4);
    Dataset data = ising_dataset(VectorXd::Zero(vech_size(q)),
                                 MatrixXd::Zero(vech_size(q), r), 80, rng);
    FyBasis fy = FyBasis::categorical(data.y);

    VectorXd g = ising_pseudo_grad(data, fy, tau0, tau);
    const double h = 1e-6;
    const double scale = g.norm();
    for (int k = 0; k < g.size(); ++k) {
      VectorXd t0p = tau0, t0m = tau0;
      MatrixXd tp = tau, tm = tau;
      if (k < tau0.size()) {
        t0p(k) += h;
        t0m(k) -= h;
      } else {
        tp.data()[k - tau0.size()] += h;
        tm.data()[k - tau0.size()] -= h;
      }
      const double fd = (ising_pseudo_loglik(data, fy, t0p, tp) -
                         ising_pseudo_loglik(data, fy, t0m, tm)) /
                        (2.0 * h);
      CHECK(std::abs(g(k) - fd) <= 1e-5 * std::max(1.0, scale));
    }
  }
}

TEST_CASE("assemble_b and assemble_c") {
  std::mt19937_64 rng(66);
  const int p = 3, q = 3, r = 2;
  ContinuousFit cont;
  cont.A = testutil::random_matrix(p, r, rng);
  cont.beta = testutil::random_matrix(p, q, rng);
  cont.Delta = testutil::random_spd(p, rng);
  IsingFit ising;
  ising.tau0 = testutil::random_vector(vech_size(q), rng);
  ising.tau = testutil::random_matrix(vech_size(q), r, rng);

  SUBCASE("decoupled blocks vanish") {
    ContinuousFit c0 = cont;
    c0.beta.setZero();
    IsingFit i0 = ising;
    i0.tau.setZero();
    MatrixXd b = assemble_b(c0, i0);
    CHECK((b.topRows(p) - c0.Delta.inverse() * c0.A).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(b.bottomRows(q + strict_lower_size(q)).norm() == 0.0);

    auto [c1, c2] = assemble_c(c0, i0);
    CHECK((c1.topRows(p) - c0.Delta.inverse() * c0.A).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(c1.bottomRows(q).norm() == 0.0);
    CHECK(c2.norm() == 0.0);
  }

  SUBCASE("q = 1 has an empty interaction block") {
    ContinuousFit c1fit;
    c1fit.A = cont.A;
    c1fit.beta = testutil::random_matrix(p, 1, rng);
    c1fit.Delta = cont.Delta;
    IsingFit i1;
    i1.tau0 = testutil::random_vector(1, rng);
    i1.tau = testutil::random_matrix(1, r, rng);
    CHECK(assemble_b(c1fit, i1).rows() == p + 1);
  }

  SUBCASE("matches the selector-matrix assembly") {
    MatrixXd b = assemble_b(cont, ising);
    CHECK(b.rows() == p + q + strict_lower_size(q));
    auto S = selector_matrices(q);
    const MatrixXd DinvA = cont.Delta.inverse() * cont.A;
    MatrixXd oracle(p + q + strict_lower_size(q), r);
    oracle.topRows(p) = DinvA;
    oracle.middleRows(p, q) = S.L * ising.tau - cont.beta.transpose() * DinvA;
    oracle.bottomRows(strict_lower_size(q)) = S.J * ising.tau;
    CHECK((b - oracle).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("Corollary 5 containment: span(b) inside the sub-optimal span") {
    MatrixXd b = assemble_b(cont, ising);
    auto [c1, c2] = assemble_c(cont, ising);
    auto S = selector_matrices(q);
    const int kq = strict_lower_size(q);
    MatrixXd M(p + q + kq, 2 * r);
    M.setZero();
    M.block(0, 0, p + q, r) = c1;
    M.block(p, r, q, r) = S.L * c2;
    M.block(p + q, r, kq, r) = S.J * c2;
    MatrixXd resid = b - projection(M) * b;
    CHECK(resid.cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("svd_truncate") {
  MatrixXd M = MatrixXd::Zero(2, 2);
  M(0, 0) = 3.0;
  M(1, 1) = 1.0;
  SvdParts parts = svd_truncate(M, 1);
  CHECK(parts.U1()(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(parts.U1()(1, 0)) <= 1e-14);

  std::mt19937_64 rng(70);
  MatrixXd R = testutil::random_matrix(8, 5, rng);
  SvdParts full = svd_truncate(R, 5);
  CHECK((full.truncated() - R).cwiseAbs().maxCoeff() <= 1e-10);

  SvdParts rank2 = svd_truncate(R, 2);
  const VectorXd s = rank2.sing;
  const double expected = std::sqrt(s(2) * s(2) + s(3) * s(3) + s(4) * s(4));
  CHECK((R - rank2.truncated()).norm() == doctest::Approx(expected).epsilon(1e-10));

  CHECK_THROWS_AS(svd_truncate(R, 6), std::invalid_argument);
}

TEST_CASE("fit_sdr special cases and reduction application") {
  std::mt19937_64 rng(80);
  {
    // q = 0: optimal collapses to PFC.
    ContD1 scen;
    Dataset data = scen.generate(120, rng);
    FyBasis fy = FyBasis::categorical(data.y);
    ReductionModel opt = fit_sdr(data, fy, ReductionKind::optimal, 1);
    CHECK(opt.kind == ReductionKind::pfc);
    ReductionModel pfc = fit_sdr(data, fy, ReductionKind::pfc, 1);
    CHECK((opt.alpha - pfc.alpha).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((opt.alpha.transpose() * opt.alpha - MatrixXd::Identity(1, 1))
              .cwiseAbs()
              .maxCoeff() <= 1e-10);
  }
  {
    // p = 0: binary-only span (L_q tau; J_q tau).
    std::mt19937_64 rng2(81);
    const int q = 3, r = 2;
    VectorXd tau0 = testutil::random_vector(vech_size(q), rng2, 0.3);
    MatrixXd tau = testutil::random_matrix(vech_size(q), r, rng2, 0.5);
    Dataset data = ising_dataset(tau0, tau, 400, rng2);
    FyBasis fy = FyBasis::categorical(data.y);
    ReductionModel model = fit_sdr(data, fy, ReductionKind::optimal, 2);
    CHECK(model.kind == ReductionKind::binary_only);
    auto S = selector_matrices(q);
    MatrixXd span(q + strict_lower_size(q), r);
    span.topRows(q) = S.L * model.ising.tau;
    span.bottomRows(strict_lower_size(q)) = S.J * model.ising.tau;
    MatrixXd resid = model.alpha - projection(span) * model.alpha;
    CHECK(resid.cwiseAbs().maxCoeff() <= 1e-8);
  }
  {
    // apply_reduction basics.
    ReductionModel model;
    model.kind = ReductionKind::pfc;
    model.p = 3;
    model.q = 0;
    model.d = 1;
    model.alpha = MatrixXd::Zero(3, 1);
    model.alpha(0, 0) = 1.0;
    model.stat_mean = VectorXd::Constant(3, 2.0);
    CHECK(apply_reduction(model, model.stat_mean, VectorXd(0)).norm() == 0.0);
    VectorXd x(3);
    x << 5.0, 7.0, -1.0;
    CHECK(apply_reduction(model, x, VectorXd(0))(0) == doctest::Approx(3.0));
  }
}

TEST_CASE("reductions of training data are centered") {
  std::mt19937_64 rng(93);
  const int n = 240, q = 3, r = 2;
  VectorXd tau0 = testutil::random_vector(vech_size(q), rng, 0.2);
  MatrixXd tau = testutil::random_matrix(vech_size(q), r, rng, 0.4);
  Dataset data = ising_dataset(tau0, tau, n, rng);
  const int p = 4;
  data.X = testutil::random_matrix(n, p, rng);
  FyBasis fy = FyBasis::categorical(data.y);
  for (ReductionKind kind : {ReductionKind::optimal, ReductionKind::suboptimal}) {
    ReductionModel model = fit_sdr(data, fy, kind, 1, 1);
    MatrixXd Z = apply_reduction_all(model, data);
    CHECK(Z.colwise().mean().cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((model.alpha.transpose() * model.alpha -
           MatrixXd::Identity(model.d, model.d))
              .cwiseAbs()
              .maxCoeff() <= 1e-10);
  }
}

TEST_CASE("consistency of the optimal reduction on the d = 1 scenario") {
  ContD1 scen;
  const MatrixXd P_true = projection(scen.alpha);
  auto median_error = [&](int n) {
    std::vector<double> errs;
    for (int rep = 0; rep < 100; ++rep) {
      std::mt19937_64 rng(1234 + rep);
      Dataset data = scen.generate(n, rng);
      FyBasis fy = FyBasis::categorical(data.y);
      ReductionModel model = fit_sdr(data, fy, ReductionKind::optimal, 1);
      errs.push_back(spectral_norm(P_true - projection(model.alpha)));
    }
    std::nth_element(errs.begin(), errs.begin() + 50, errs.end());
    return errs[50];
  };
  const double med100 = median_error(100);
  const double med750 = median_error(750);
  CHECK(med750 < med100);
}

TEST_CASE("reduction outputs are rotation-invariant under category relabeling") {
  std::mt19937_64 rng(95);
  const int n = 300, q = 3, r = 2;
  VectorXd tau0 = testutil::random_vector(vech_size(q), rng, 0.2);
  MatrixXd tau = testutil::random_matrix(vech_size(q), r, rng, 0.5);
  Dataset data = ising_dataset(tau0, tau, n, rng);
  data.X = testutil::random_matrix(n, 2, rng);

  Dataset relabeled = data;  // swap category labels 1 <-> 3
  for (int i = 0; i < n; ++i) {
    if (data.y(i) == 1.0) relabeled.y(i) = 3.0;
    if (data.y(i) == 3.0) relabeled.y(i) = 1.0;
  }

  // With d equal to the full column rank of b-hat both fits span the same
  // subspace, so the reduced coordinates agree up to an orthogonal rotation:
  // their Gram matrices coincide.
  FyBasis fy = FyBasis::categorical(data.y);
  FyBasis fy2 = FyBasis::categorical(relabeled.y);
  ReductionModel m1 = fit_sdr(data, fy, ReductionKind::optimal, r);
  ReductionModel m2 = fit_sdr(relabeled, fy2, ReductionKind::optimal, r);
  MatrixXd Z1 = apply_reduction_all(m1, data);
  MatrixXd Z2 = apply_reduction_all(m2, relabeled);
  CHECK((Z1 * Z1.transpose() - Z2 * Z2.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
}
