#include "mixsdr/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>

namespace mixsdr {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

/// Position of the strict-lower pair (i, j), i > j, in column-major order.
inline int lower_index(int i, int j, int q) {
  return j * (q - 1) - j * (j - 1) / 2 + (i - j - 1);
}

void check_cap(int q, int cap) {
  if (q > cap) throw std::domain_error("ising: enumeration limit exceeded (q > cap)");
}

void check_binary(const Eigen::Ref<const VectorXd>& h) {
  for (int j = 0; j < h.size(); ++j)
    if (h(j) != 0.0 && h(j) != 1.0)
      throw std::invalid_argument("ising: h entries must be 0 or 1");
}

/// Unnormalized log masses for all 2^q states, built incrementally over the
/// lowest set bit.
std::vector<double> state_exponents(const IsingParams& gp) {
  const int q = static_cast<int>(gp.diag.size());
  const std::size_t nstates = std::size_t{1} << q;
  std::vector<double> expo(nstates);
  expo[0] = 0.0;
  for (std::size_t s = 1; s < nstates; ++s) {
    const int b = std::countr_zero(s);
    const std::size_t rest = s & (s - 1);
    double e = expo[rest] + gp.diag(b);
    for (std::size_t t = rest; t != 0; t &= (t - 1)) {
      const int j = std::countr_zero(t);
      e += gp.lower(lower_index(j, b, q));  // j > b: b is the lowest bit
    }
    expo[s] = e;
  }
  return expo;
}

double log_sum_exp(const std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Delta = S^{-1} with S = unvech(eta3); throws if S is not SPD.
MatrixXd delta_from_eta3(const Eigen::Ref<const VectorXd>& eta3, double* logdet_S) {
  const MatrixXd S = unvech(eta3);
  Eigen::LLT<MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("psi: eta3 block is not positive definite");
  if (logdet_S) {
    double ld = 0.0;
    for (int i = 0; i < S.rows(); ++i) ld += std::log(llt.matrixL()(i, i));
    *logdet_S = 2.0 * ld;
  }
  return llt.solve(MatrixXd::Identity(S.rows(), S.cols()));
}

}  // namespace

Dims Dims::make(int p, int q, int r) {
  Dims d;
  d.p = p;
  d.q = q;
  d.r = r;
  d.m_p = p * (p + 1) / 2;
  d.m_q = q * (q + 1) / 2;
  d.k_q = q * (q - 1) / 2;
  d.m = p + d.m_q;
  const int ne[5] = {p, q, d.m_p, p * q, d.k_q};
  const int nt[5] = {p + p * r, q + q * r, d.m_p, p * q, d.k_q + d.k_q * r};
  int eo = 0, to = 0;
  for (int k = 0; k < 5; ++k) {
    d.n_eta[k] = ne[k];
    d.eta_off[k] = eo;
    eo += ne[k];
    d.n_theta[k] = nt[k];
    d.theta_off[k] = to;
    to += nt[k];
  }
  d.eta_dim = eo;
  d.theta_dim = to;
  return d;
}

VectorXd NaturalParams::eta(const VectorXd& f) const {
  const Dims& d = dims;
  VectorXd out(d.eta_dim);
  auto fill = [&](int k, int n) {
    if (n == 0) return;
    VectorXd v = theta.segment(d.theta_off[k], n);
    if (d.n_theta[k] > n) {
      const Eigen::Map<const MatrixXd> slope(theta.data() + d.theta_off[k] + n, n, d.r);
      v += slope * f;
    }
    out.segment(d.eta_off[k], n) = v;
  };
  fill(0, d.p);
  fill(1, d.q);
  fill(2, d.m_p);
  fill(3, d.p * d.q);
  fill(4, d.k_q);
  return out;
}

MatrixXd NaturalParams::Fy(const VectorXd& f) const {
  const Dims& d = dims;
  MatrixXd F = MatrixXd::Zero(d.eta_dim, d.theta_dim);
  for (int k = 0; k < 5; ++k) {
    const int n = d.n_eta[k];
    if (n == 0) continue;
    F.block(d.eta_off[k], d.theta_off[k], n, n).setIdentity();
    if (d.n_theta[k] > n)
      for (int c = 0; c < d.r; ++c)
        F.block(d.eta_off[k], d.theta_off[k] + n + c * n, n, n) =
            f(c) * MatrixXd::Identity(n, n);
  }
  return F;
}

NaturalParams natural_params(const MixedModelParams& params) {
  const int p = params.p(), q = params.q(), r = params.r();
  NaturalParams np;
  np.dims = Dims::make(p, q, r);
  np.theta.resize(np.dims.theta_dim);

  MatrixXd Dinv;
  if (p > 0) {
    Eigen::LLT<MatrixXd> llt(params.Delta);
    if (llt.info() != Eigen::Success)
      throw std::domain_error("natural_params: Delta is singular or not SPD");
    Dinv = llt.solve(MatrixXd::Identity(p, p));
  }

  const Dims& d = np.dims;
  if (p > 0) {
    VectorXd t10 = Dinv * params.mu_X;
    if (q > 0) t10 -= Dinv * params.beta * params.mu_H;
    np.theta.segment(d.theta_off[0], p) = t10;
    const MatrixXd DinvA = Dinv * params.A;
    np.theta.segment(d.theta_off[0] + p, p * r) =
        Eigen::Map<const VectorXd>(DinvA.data(), p * r);
    np.theta.segment(d.theta_off[2], d.m_p) = vech(Dinv);
  }
  if (q > 0) {
    MatrixXd BtDB = MatrixXd::Zero(q, q);  // beta^T Delta^{-1} beta
    VectorXd t20 = VectorXd::Zero(q);
    MatrixXd t21m(q, r);
    if (p > 0) {
      BtDB = params.beta.transpose() * Dinv * params.beta;
      t20 = -params.beta.transpose() * Dinv * params.mu_X + BtDB * params.mu_H;
    }
    // tau0 / tau split into diagonal and strict-lower rows of the vech.
    for (int i = 0; i < q; ++i) {
      const int vi = vech_index(i, i, q);
      t20(i) += params.tau0(vi) - 0.5 * BtDB(i, i);
      t21m.row(i) = params.tau.row(vi);
    }
    if (p > 0) t21m -= params.beta.transpose() * Dinv * params.A;
    np.theta.segment(d.theta_off[1], q) = t20;
    np.theta.segment(d.theta_off[1] + q, q * r) =
        Eigen::Map<const VectorXd>(t21m.data(), q * r);
    if (p > 0) {
      const MatrixXd DinvB = Dinv * params.beta;
      np.theta.segment(d.theta_off[3], p * q) =
          Eigen::Map<const VectorXd>(DinvB.data(), p * q);
    }
    if (d.k_q > 0) {
      VectorXd t50(d.k_q);
      MatrixXd t51m(d.k_q, r);
      int row = 0;
      for (int j = 0; j < q; ++j)
        for (int i = j + 1; i < q; ++i, ++row) {
          const int vi = vech_index(i, j, q);
          t50(row) = params.tau0(vi) - BtDB(i, j);
          t51m.row(row) = params.tau.row(vi);
        }
      np.theta.segment(d.theta_off[4], d.k_q) = t50;
      np.theta.segment(d.theta_off[4] + d.k_q, d.k_q * r) =
          Eigen::Map<const VectorXd>(t51m.data(), d.k_q * r);
    }
  }
  return np;
}

MatrixXd gamma_matrix(const VectorXd& tau0, const MatrixXd& tau, const VectorXd& f) {
  return unvech(tau0 + tau * f);
}

IsingParams ising_params_from_gamma(const MatrixXd& Gamma) {
  const int q = static_cast<int>(Gamma.rows());
  IsingParams gp;
  gp.diag = Gamma.diagonal();
  gp.lower.resize(strict_lower_size(q));
  int row = 0;
  for (int j = 0; j < q; ++j)
    for (int i = j + 1; i < q; ++i) gp.lower(row++) = Gamma(i, j);
  return gp;
}

double ising_log_partition(const IsingParams& gp, int cap) {
  const int q = static_cast<int>(gp.diag.size());
  if (q == 0) return 0.0;
  check_cap(q, cap);
  return log_sum_exp(state_exponents(gp));
}

double ising_pmf(const Eigen::Ref<const VectorXd>& h, const MatrixXd& Gamma, int cap) {
  const int q = static_cast<int>(Gamma.rows());
  if (h.size() != q) throw std::invalid_argument("ising_pmf: dimension mismatch");
  check_binary(h);
  check_cap(q, cap);
  const IsingParams gp = ising_params_from_gamma(Gamma);
  double e = 0.0;
  for (int i = 0; i < q; ++i) {
    if (h(i) == 0.0) continue;
    e += gp.diag(i);
    for (int j = 0; j < i; ++j)
      if (h(j) == 1.0) e += gp.lower(lower_index(i, j, q));
  }
  return std::exp(e - ising_log_partition(gp, cap));
}

IsingMoments ising_moments(const IsingParams& gp, int cap) {
  const int q = static_cast<int>(gp.diag.size());
  check_cap(q, cap);
  const int dim = q + strict_lower_size(q);
  const std::vector<double> expo = state_exponents(gp);
  const double logG = log_sum_exp(expo);

  IsingMoments mom;
  mom.mean = VectorXd::Zero(dim);
  MatrixXd m2 = MatrixXd::Zero(dim, dim);
  std::vector<int> on(dim);
  for (std::size_t s = 0; s < expo.size(); ++s) {
    const double w = std::exp(expo[s] - logG);
    int cnt = 0;
    for (std::size_t t = s; t != 0; t &= (t - 1)) on[cnt++] = std::countr_zero(t);
    // indices of active coordinates of s(h): main effects then pairs
    int total = cnt;
    for (int a = 1; a < cnt; ++a)
      for (int b = 0; b < a; ++b) on[total++] = q + lower_index(on[a], on[b], q);
    for (int a = 0; a < total; ++a) {
      mom.mean(on[a]) += w;
      for (int b = 0; b <= a; ++b) m2(on[a], on[b]) += w;
    }
  }
  mom.cov = m2.selfadjointView<Eigen::Lower>();
  mom.cov -= mom.mean * mom.mean.transpose();
  return mom;
}

MatrixXd ising_sample(const MatrixXd& Gamma, std::mt19937_64& rng, int n, int cap,
                      GibbsOptions gibbs) {
  const int q = static_cast<int>(Gamma.rows());
  MatrixXd out(n, q);
  if (q == 0) return out;
  const IsingParams gp = ising_params_from_gamma(Gamma);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  if (q <= cap) {
    const std::vector<double> expo = state_exponents(gp);
    const double logG = log_sum_exp(expo);
    std::vector<double> cum(expo.size());
    double acc = 0.0;
    for (std::size_t s = 0; s < expo.size(); ++s) {
      acc += std::exp(expo[s] - logG);
      cum[s] = acc;
    }
    cum.back() = 1.0;
    for (int i = 0; i < n; ++i) {
      const double u = unif(rng);
      const std::size_t s =
          std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
      for (int j = 0; j < q; ++j) out(i, j) = (s >> j) & 1 ? 1.0 : 0.0;
    }
    return out;
  }

  // Gibbs fallback: full conditionals are logistic in the neighbours.
  VectorXd h(q);
  for (int j = 0; j < q; ++j) h(j) = unif(rng) < 0.5 ? 1.0 : 0.0;
  auto sweep = [&]() {
    for (int j = 0; j < q; ++j) {
      double lin = gp.diag(j);
      for (int i = 0; i < q; ++i) {
        if (i == j || h(i) == 0.0) continue;
        lin += gp.lower(lower_index(std::max(i, j), std::min(i, j), q));
      }
      h(j) = unif(rng) < 1.0 / (1.0 + std::exp(-lin)) ? 1.0 : 0.0;
    }
  };
  for (int b = 0; b < gibbs.burn_in; ++b) sweep();
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < gibbs.thinning; ++t) sweep();
    out.row(i) = h.transpose();
  }
  return out;
}

VectorXd stat_t(const VectorXd& x, const VectorXd& h) {
  check_binary(h);
  const int p = static_cast<int>(x.size());
  const int q = static_cast<int>(h.size());
  VectorXd t(p + q + strict_lower_size(q));
  t.head(p) = x;
  t.segment(p, q) = h;
  int row = p + q;
  for (int j = 0; j < q; ++j)
    for (int i = j + 1; i < q; ++i) t(row++) = h(i) * h(j);
  return t;
}

VectorXd stat_s(const VectorXd& h) { return stat_t(VectorXd(0), h); }

VectorXd stat_w(const VectorXd& x, const VectorXd& h) {
  check_binary(h);
  const int p = static_cast<int>(x.size());
  const int q = static_cast<int>(h.size());
  VectorXd w(p + q + vech_size(q));
  w.head(p) = x;
  w.segment(p, q) = h;
  for (int j = 0; j < q; ++j)
    for (int i = j; i < q; ++i) w(p + q + vech_index(i, j, q)) = h(i) * h(j);
  return w;
}

VectorXd stat_T(const VectorXd& x, const VectorXd& h) {
  const int p = static_cast<int>(x.size());
  const int q = static_cast<int>(h.size());
  const Dims d = Dims::make(p, q, 0);
  VectorXd T(d.eta_dim);
  T.segment(d.eta_off[0], p) = x;
  T.segment(d.eta_off[1], q) = h;
  // -1/2 D_p^T D_p vech(x x^T): off-diagonal vech entries pick up a factor 2.
  for (int j = 0; j < p; ++j)
    for (int i = j; i < p; ++i)
      T(d.eta_off[2] + vech_index(i, j, p)) = (i == j ? -0.5 : -1.0) * x(i) * x(j);
  for (int j = 0; j < q; ++j)
    for (int i = 0; i < p; ++i) T(d.eta_off[3] + j * p + i) = x(i) * h(j);
  int row = 0;
  for (int j = 0; j < q; ++j)
    for (int i = j + 1; i < q; ++i) T(d.eta_off[4] + row++) = h(i) * h(j);
  return T;
}

double psi(const VectorXd& eta, int p, int q, int cap) {
  const Dims d = Dims::make(p, q, 0);
  if (eta.size() != d.eta_dim) throw std::invalid_argument("psi: eta has wrong length");
  double value = 0.0;
  MatrixXd Delta;
  if (p > 0) {
    double logdet_S = 0.0;
    Delta = delta_from_eta3(eta.segment(d.eta_off[2], d.m_p), &logdet_S);
    const VectorXd eta1 = eta.segment(d.eta_off[0], p);
    value += -0.5 * logdet_S + 0.5 * eta1.dot(Delta * eta1);
  }
  if (q > 0) {
    IsingParams gp;
    gp.diag = eta.segment(d.eta_off[1], q);
    gp.lower = eta.segment(d.eta_off[4], d.k_q);
    if (p > 0) {
      const Eigen::Map<const MatrixXd> B(eta.data() + d.eta_off[3], p, q);
      const VectorXd eta1 = eta.segment(d.eta_off[0], p);
      const MatrixXd Q = B.transpose() * Delta * B;
      gp.diag += B.transpose() * (Delta * eta1) + 0.5 * Q.diagonal();
      int row = 0;
      for (int j = 0; j < q; ++j)
        for (int i = j + 1; i < q; ++i) gp.lower(row++) += Q(i, j);
    }
    value += ising_log_partition(gp, cap);
  }
  return value;
}

double log_density_factorized(const VectorXd& x, const VectorXd& h,
                              const MixedModelParams& params, const VectorXd& f,
                              int cap) {
  const int p = params.p(), q = params.q();
  double value = 0.0;
  if (p > 0) {
    VectorXd mean = params.mu_X + params.A * f;
    if (q > 0) mean += params.beta * (h - params.mu_H);
    Eigen::LLT<MatrixXd> llt(params.Delta);
    if (llt.info() != Eigen::Success)
      throw std::domain_error("log_density: Delta is singular or not SPD");
    double logdet = 0.0;
    for (int i = 0; i < p; ++i) logdet += std::log(llt.matrixL()(i, i));
    const VectorXd resid = x - mean;
    value += -0.5 * p * kLog2Pi - logdet - 0.5 * resid.dot(llt.solve(resid));
  }
  if (q > 0) {
    check_binary(h);
    const IsingParams gp =
        ising_params_from_gamma(gamma_matrix(params.tau0, params.tau, f));
    double e = 0.0;
    for (int i = 0; i < q; ++i) {
      if (h(i) == 0.0) continue;
      e += gp.diag(i);
      for (int j = 0; j < i; ++j)
        if (h(j) == 1.0) e += gp.lower(lower_index(i, j, q));
    }
    value += e - ising_log_partition(gp, cap);
  }
  return value;
}

double log_density_canonical(const VectorXd& x, const VectorXd& h, const VectorXd& eta,
                             int p, int q, int cap) {
  return -0.5 * p * kLog2Pi + stat_T(x, h).dot(eta) - psi(eta, p, q, cap);
}

}  // namespace mixsdr
