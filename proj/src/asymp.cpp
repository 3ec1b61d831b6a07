#include "mixsdr/asymp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <boost/math/distributions/chi_squared.hpp>

#include "mixsdr/util.hpp"

namespace mixsdr {

namespace {

MatrixXd kron(const MatrixXd& A, const MatrixXd& B) {
  MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j)
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

/// Pseudo-inverse of a symmetric PSD matrix via its eigendecomposition.
MatrixXd pinv_sym(const MatrixXd& M, double tol, int* rank_out) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  const VectorXd& ev = es.eigenvalues();
  const double cut = tol * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  VectorXd inv = VectorXd::Zero(ev.size());
  int rank = 0;
  for (int i = 0; i < ev.size(); ++i)
    if (ev(i) > cut) {
      inv(i) = 1.0 / ev(i);
      ++rank;
    }
  if (rank_out) *rank_out = rank;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

int rank_sym(const MatrixXd& M, double tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M, Eigen::EigenvaluesOnly);
  const VectorXd& ev = es.eigenvalues();
  const double cut = tol * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  int rank = 0;
  for (int i = 0; i < ev.size(); ++i)
    if (ev(i) > cut) ++rank;
  return rank;
}

void add_block(MatrixXd& J, int roff, int coff, const MatrixXd& M) {
  J.block(roff, coff, M.rows(), M.cols()) += M;
  if (roff != coff) J.block(coff, roff, M.cols(), M.rows()) += M.transpose();
}

/// theta index of each vec(b) coordinate: vec(b) = W M theta.
std::vector<int> vecb_theta_index(const Dims& d) {
  std::vector<int> idx(d.m * d.r);
  for (int k = 0; k < d.r; ++k)
    for (int i = 0; i < d.m; ++i) {
      int t;
      if (i < d.p)
        t = d.theta_off[0] + d.p + k * d.p + i;
      else if (i < d.p + d.q)
        t = d.theta_off[1] + d.q + k * d.q + (i - d.p);
      else
        t = d.theta_off[4] + d.k_q + k * d.k_q + (i - d.p - d.q);
      idx[i + d.m * k] = t;
    }
  return idx;
}

/// Q-hat = (R0^T kron U0^T) Vrcl (R0 kron U0) for the rank-j null.
MatrixXd qhat_matrix(const SvdParts& svd, const MatrixXd& Vrcl, int j) {
  const MatrixXd U0 = svd.U.rightCols(svd.U.cols() - j);
  const MatrixXd R0 = svd.V.rightCols(svd.V.cols() - j);
  const MatrixXd G = kron(R0, U0);
  MatrixXd Q = G.transpose() * Vrcl * G;
  return 0.5 * (Q + Q.transpose());
}

void check_rank_args(const MatrixXd& bhat, const MatrixXd& Vrcl, int j) {
  const int m = static_cast<int>(bhat.rows());
  const int r = static_cast<int>(bhat.cols());
  if (j < 0 || j >= std::min(m, r))
    throw std::invalid_argument("rank test: j must satisfy 0 <= j < min(m, r)");
  if (Vrcl.rows() != m * r || Vrcl.cols() != m * r)
    throw std::invalid_argument("rank test: Vrcl shape does not match vec(b)");
}

}  // namespace

MatrixXd psi_hessian(const VectorXd& eta, int p, int q, int cap) {
  const Dims d = Dims::make(p, q, 0);
  if (eta.size() != d.eta_dim)
    throw std::invalid_argument("psi_hessian: eta has wrong length");
  MatrixXd J = MatrixXd::Zero(d.eta_dim, d.eta_dim);

  MatrixXd Delta, Dp;
  VectorXd eta1;
  if (p > 0) {
    const MatrixXd S = unvech(eta.segment(d.eta_off[2], d.m_p));
    Eigen::LLT<MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
      throw std::domain_error("psi_hessian: eta3 block is not positive definite");
    Delta = llt.solve(MatrixXd::Identity(p, p));
    eta1 = eta.segment(d.eta_off[0], p);
    Dp = duplication_matrix(p);

    // log-det piece
    add_block(J, d.eta_off[2], d.eta_off[2],
              0.5 * Dp.transpose() * kron(Delta, Delta) * Dp);
    // quadratic piece
    add_block(J, d.eta_off[0], d.eta_off[0], Delta);
    add_block(J, d.eta_off[0], d.eta_off[2],
              MatrixXd(-kron((eta1.transpose() * Delta).eval(), Delta) * Dp));
    const MatrixXd DRD = Delta * eta1 * eta1.transpose() * Delta;
    add_block(J, d.eta_off[2], d.eta_off[2],
              0.5 * Dp.transpose() * (kron(DRD, Delta) + kron(Delta, DRD)) * Dp);
  }

  if (q > 0) {
    IsingParams gp;
    gp.diag = eta.segment(d.eta_off[1], q);
    gp.lower = eta.segment(d.eta_off[4], d.k_q);
    MatrixXd B, BtD;
    if (p > 0) {
      B = Eigen::Map<const MatrixXd>(eta.data() + d.eta_off[3], p, q);
      BtD = B.transpose() * Delta;
      const MatrixXd Q = BtD * B;
      gp.diag += BtD * eta1 + 0.5 * Q.diagonal();
      int row = 0;
      for (int j2 = 0; j2 < q; ++j2)
        for (int i = j2 + 1; i < q; ++i) gp.lower(row++) += Q(i, j2);
    }
    const IsingMoments mom = ising_moments(gp, cap);

    // Jacobian of the tilt maps (M2; M1) with respect to eta.
    MatrixXd Jm = MatrixXd::Zero(q + d.k_q, d.eta_dim);
    Jm.block(0, d.eta_off[1], q, q).setIdentity();
    Jm.block(q, d.eta_off[4], d.k_q, d.k_q).setIdentity();
    if (p > 0) {
      Jm.block(0, d.eta_off[0], q, p) = BtD;
      const MatrixXd KBB_D = kron(BtD, BtD) * Dp;                       // q^2 x m_p
      const MatrixXd Keta = kron((eta1.transpose() * Delta).eval(), BtD) * Dp;  // q x m_p
      const MatrixXd KIB = kron(MatrixXd::Identity(q, q), BtD);         // q^2 x pq
      const MatrixXd KIe =
          kron(MatrixXd::Identity(q, q), (eta1.transpose() * Delta).eval());  // q x pq
      for (int i = 0; i < q; ++i) {
        Jm.row(i).segment(d.eta_off[2], d.m_p) =
            -Keta.row(i) - 0.5 * KBB_D.row(i + q * i);
        Jm.row(i).segment(d.eta_off[3], p * q) = KIe.row(i) + KIB.row(i + q * i);
      }
      int row = 0;
      for (int j2 = 0; j2 < q; ++j2)
        for (int i = j2 + 1; i < q; ++i, ++row) {
          Jm.row(q + row).segment(d.eta_off[2], d.m_p) =
              -0.5 * (KBB_D.row(i + q * j2) + KBB_D.row(j2 + q * i));
          Jm.row(q + row).segment(d.eta_off[3], p * q) =
              KIB.row(i + q * j2) + KIB.row(j2 + q * i);
        }
    }
    J += Jm.transpose() * mom.cov * Jm;

    if (p > 0) {
      // Curvature of the tilt maps, weighted by the Ising means.
      const VectorXd u1 = mom.mean.head(q);
      MatrixXd W2 = MatrixXd::Zero(q, q);
      for (int i = 0; i < q; ++i) W2(i, i) = 0.5 * u1(i);
      int row = 0;
      for (int j2 = 0; j2 < q; ++j2)
        for (int i = j2 + 1; i < q; ++i, ++row)
          W2(i, j2) = W2(j2, i) = 0.5 * mom.mean(q + row);

      add_block(J, d.eta_off[0], d.eta_off[3], kron(u1.transpose().eval(), Delta));
      const VectorXd w = Delta * (B * u1);
      add_block(J, d.eta_off[0], d.eta_off[2],
                MatrixXd(-kron(w.transpose().eval(), Delta) * Dp));
      add_block(J, d.eta_off[3], d.eta_off[3], 2.0 * kron(W2, Delta));
      const MatrixXd Mm = Delta * eta1 * u1.transpose() + 2.0 * (Delta * B) * W2;
      add_block(J, d.eta_off[3], d.eta_off[2],
                MatrixXd(-kron(Mm.transpose().eval(), Delta) * Dp));
      const MatrixXd P = B * u1 * eta1.transpose() + B * W2 * B.transpose();
      add_block(J, d.eta_off[2], d.eta_off[2],
                Dp.transpose() *
                    (kron(Delta * P.transpose() * Delta, Delta) +
                     kron(Delta, Delta * P * Delta)) *
                    Dp);
    }
  }
  return 0.5 * (J + J.transpose());
}

namespace {

/// Accumulate w * F_y^T J F_y into Info, exploiting the (I, f^T kron I)
/// block structure of F_y.
void accumulate_information(MatrixXd& info, const MatrixXd& J, const VectorXd& f,
                            const Dims& d, double w) {
  const bool has_slope[5] = {true, true, false, false, true};
  for (int a = 0; a < 5; ++a) {
    if (d.n_eta[a] == 0) continue;
    for (int b = 0; b < 5; ++b) {
      if (d.n_eta[b] == 0) continue;
      const auto Jab = J.block(d.eta_off[a], d.eta_off[b], d.n_eta[a], d.n_eta[b]);
      const int ka_max = has_slope[a] ? d.r : 0;
      const int kb_max = has_slope[b] ? d.r : 0;
      for (int ka = -1; ka < ka_max; ++ka)
        for (int kb = -1; kb < kb_max; ++kb) {
          const double coef = (ka < 0 ? 1.0 : f(ka)) * (kb < 0 ? 1.0 : f(kb));
          if (coef == 0.0) continue;
          const int roff = d.theta_off[a] + (ka < 0 ? 0 : d.n_eta[a] + ka * d.n_eta[a]);
          const int coff = d.theta_off[b] + (kb < 0 ? 0 : d.n_eta[b] + kb * d.n_eta[b]);
          info.block(roff, coff, d.n_eta[a], d.n_eta[b]) += (w * coef) * Jab;
        }
    }
  }
}

}  // namespace

VEstimate estimate_V(const Dataset& data, const FyBasis& fy, const MixedModelParams& params,
                     int cap, double pinv_tol) {
  const NaturalParams np = natural_params(params);
  const Dims& d = np.dims;
  const int n = data.n();
  MatrixXd info = MatrixXd::Zero(d.theta_dim, d.theta_dim);

  if (fy.kind() == FyKind::custom) {
    const MatrixXd F = fy.centered_matrix(data.y);
    for (int i = 0; i < n; ++i) {
      const VectorXd f = F.row(i);
      accumulate_information(info, psi_hessian(np.eta(f), d.p, d.q, cap), f, d, 1.0 / n);
    }
  } else {
    std::map<double, int> counts;
    for (int i = 0; i < n; ++i) ++counts[data.y(i)];
    for (const auto& [yval, cnt] : counts) {
      const VectorXd f = fy.centered(yval);
      accumulate_information(info, psi_hessian(np.eta(f), d.p, d.q, cap), f, d,
                             static_cast<double>(cnt) / n);
    }
  }
  info = 0.5 * (info + info.transpose());

  VEstimate out;
  out.dims = d;
  int rank = 0;
  out.V = pinv_sym(info, pinv_tol, &rank);
  out.rank = rank;
  out.rank_deficient = rank < d.theta_dim;
  return out;
}

MatrixXd build_M(int p, int q, int r) {
  const Dims d = Dims::make(p, q, r);
  const int rows = p * r + q * r + r * d.k_q;
  MatrixXd M = MatrixXd::Zero(rows, d.theta_dim);
  int row = 0;
  for (int i = 0; i < p * r; ++i) M(row++, d.theta_off[0] + p + i) = 1.0;
  for (int i = 0; i < q * r; ++i) M(row++, d.theta_off[1] + q + i) = 1.0;
  for (int i = 0; i < d.k_q * r; ++i) M(row++, d.theta_off[4] + d.k_q + i) = 1.0;
  return M;
}

MatrixXd build_W(int p, int q, int r) {
  const Dims d = Dims::make(p, q, r);
  MatrixXd W = MatrixXd::Zero(d.m * r, d.m * r);
  for (int k = 0; k < r; ++k)
    for (int i = 0; i < d.m; ++i) {
      int col;
      if (i < p)
        col = k * p + i;
      else if (i < p + q)
        col = p * r + k * q + (i - p);
      else
        col = p * r + q * r + k * d.k_q + (i - p - q);
      W(i + d.m * k, col) = 1.0;
    }
  return W;
}

MatrixXd vrcl(const MatrixXd& V, int p, int q, int r) {
  const Dims d = Dims::make(p, q, r);
  if (V.rows() != d.theta_dim || V.cols() != d.theta_dim)
    throw std::invalid_argument("vrcl: V shape does not match theta");
  const std::vector<int> idx = vecb_theta_index(d);
  const int mr = d.m * r;
  MatrixXd out(mr, mr);
  for (int a = 0; a < mr; ++a)
    for (int b = 0; b < mr; ++b) out(a, b) = V(idx[a], idx[b]);
  return out;
}

CovarianceEstimates covariance_estimates(const Dataset& data, const FyBasis& fy,
                                         const MixedModelParams& params) {
  const int p = params.p(), q = params.q(), r = params.r();
  CovarianceEstimates out;
  VEstimate v = estimate_V(data, fy, params);
  out.V = std::move(v.V);
  out.rank_deficient = v.rank_deficient;
  out.V_rcl = vrcl(out.V, p, q, r);
  out.W = build_W(p, q, r);
  out.M = build_M(p, q, r);
  return out;
}

// Delta-method Jacobian machinery for the sub-optimal blocks. Both c1 and
// c2 are smooth functions of theta through Ma = unvec(theta_{1,1}),
// S = unvech(theta_3) and B = unvec(theta_4): the continuous factor is
// c1 = (Ma; -B^T S^{-1} Ma) and the binary one rebuilds tau row by row from
// L_q tau = unvec(theta_{2,1}) + B^T S^{-1} Ma and J_q tau = unvec(theta_{5,1}).
namespace {

struct SubBlocks {
  MatrixXd Ma;   // p x r, Delta^{-1} A
  MatrixXd D;    // p x p, Delta
  MatrixXd B;    // p x q, Delta^{-1} beta
  MatrixXd BtD;  // q x p
  MatrixXd DMa;  // p x r
};

SubBlocks sub_blocks(const NaturalParams& np) {
  const Dims& d = np.dims;
  SubBlocks sb;
  if (d.p == 0) return sb;
  sb.Ma = Eigen::Map<const MatrixXd>(np.theta.data() + d.theta_off[0] + d.p, d.p, d.r);
  const MatrixXd S = unvech(np.theta.segment(d.theta_off[2], d.m_p));
  sb.D = S.llt().solve(MatrixXd::Identity(d.p, d.p));
  sb.B = Eigen::Map<const MatrixXd>(np.theta.data() + d.theta_off[3], d.p, d.q);
  sb.BtD = sb.B.transpose() * sb.D;
  sb.DMa = sb.D * sb.Ma;
  return sb;
}

/// Jacobian of vec(B^T D Ma) over theta, q r rows.
MatrixXd jac_btdma(const SubBlocks& sb, const Dims& d) {
  const int p = d.p, q = d.q, r = d.r;
  MatrixXd J = MatrixXd::Zero(q * r, d.theta_dim);
  if (p == 0 || q == 0) return J;
  J.block(0, d.theta_off[0] + p, q * r, p * r) = kron(MatrixXd::Identity(r, r), sb.BtD);
  J.block(0, d.theta_off[2], q * r, d.m_p) =
      -kron(sb.DMa.transpose(), sb.BtD) * duplication_matrix(p);
  J.block(0, d.theta_off[3], q * r, p * q) =
      kron(sb.DMa.transpose(), MatrixXd::Identity(q, q)) * commutation_matrix(p, q);
  return J;
}

}  // namespace

MatrixXd cov_c1(const VEstimate& V, const NaturalParams& np) {
  const Dims& d = np.dims;
  const int p = d.p, q = d.q, r = d.r;
  if (p == 0) return MatrixXd(0, 0);
  const SubBlocks sb = sub_blocks(np);
  MatrixXd Jc = MatrixXd::Zero((p + q) * r, d.theta_dim);
  const MatrixXd Jb = jac_btdma(sb, d);
  for (int k = 0; k < r; ++k) {
    for (int i = 0; i < p; ++i)
      Jc(k * (p + q) + i, d.theta_off[0] + p + k * p + i) = 1.0;
    for (int i = 0; i < q; ++i) Jc.row(k * (p + q) + p + i) = -Jb.row(k * q + i);
  }
  return Jc * V.V * Jc.transpose();
}

MatrixXd cov_c2(const VEstimate& V, const NaturalParams& np) {
  const Dims& d = np.dims;
  const int p = d.p, q = d.q, r = d.r;
  if (q == 0) return MatrixXd(0, 0);
  MatrixXd Jc = MatrixXd::Zero(d.m_q * r, d.theta_dim);
  MatrixXd Jb = MatrixXd::Zero(q * r, d.theta_dim);
  if (p > 0) Jb = jac_btdma(sub_blocks(np), d);
  for (int k = 0; k < r; ++k) {
    for (int i = 0; i < q; ++i) {
      const int row = k * d.m_q + vech_index(i, i, q);
      Jc(row, d.theta_off[1] + q + k * q + i) = 1.0;
      if (p > 0) Jc.row(row) += Jb.row(k * q + i);
    }
    int pair = 0;
    for (int j = 0; j < q; ++j)
      for (int i = j + 1; i < q; ++i, ++pair)
        Jc(k * d.m_q + vech_index(i, j, q), d.theta_off[4] + d.k_q + k * d.k_q + pair) = 1.0;
  }
  return Jc * V.V * Jc.transpose();
}


// ---------------------------------------------------------------------------
// Influence-function covariance machinery.

namespace {

/// Stacked influence functions for (vec([A beta]), vech(Delta), tau-support)
/// and the pieces their delta-method Jacobians need.
struct InfluenceStack {
  int n = 0, p = 0, q = 0, r = 0, kq = 0, mq = 0;
  int dim_ab = 0, dim_delta = 0, dim_tau = 0;
  int na = 0;                // active vech coordinates of the tau support
  std::vector<int> v2a;      // vech -> active index, -1 off support
  MatrixXd Sigma;            // avar of sqrt(n) times the stacked estimator
  MatrixXd Dinv, b1, beta;   // Delta^{-1}, Delta^{-1} A, beta
  MatrixXd Dp;               // duplication matrix for p

  int tau_col(int k, int ve) const {  // tau column k, vech coordinate ve
    return dim_ab + dim_delta + (k + 1) * na + v2a[ve];
  }
};

InfluenceStack build_influence(const Dataset& data, const FyBasis& fy,
                               const ContinuousFit& cont, const IsingFit& ising) {
  InfluenceStack st;
  st.n = data.n();
  st.p = data.p();
  st.q = data.q();
  st.r = fy.r();
  st.kq = strict_lower_size(st.q);
  st.mq = vech_size(st.q);
  const int n = st.n, p = st.p, q = st.q, r = st.r;

  IsingScoreParts parts;
  if (q > 0) {
    parts = ising_score_parts(data, fy, ising);
    st.na = static_cast<int>(parts.active_vech.size());
    st.v2a.assign(st.mq, -1);
    for (int a = 0; a < st.na; ++a) st.v2a[parts.active_vech[a]] = a;
    st.dim_tau = st.na * (1 + r);
  }
  st.dim_ab = p * (r + q);
  st.dim_delta = vech_size(p);
  const int dim = st.dim_ab + st.dim_delta + st.dim_tau;

  MatrixXd psi = MatrixXd::Zero(n, dim);
  if (p > 0) {
    const MatrixXd F = fy.centered_matrix(data.y);
    MatrixXd L(n, r + q);
    L.leftCols(r) = F;
    if (q > 0) L.rightCols(q) = data.H.rowwise() - cont.h_mean.transpose();
    MatrixXd G = L.transpose() * L / n;
    const MatrixXd W = L * pinv_sym(G, 1e-12, nullptr);  // rows G^{-1} l_i
    const VectorXd vd = vech(cont.Delta);
    for (int i = 0; i < n; ++i) {
      const auto e = cont.residuals.row(i);
      for (int j = 0; j < r + q; ++j)
        psi.row(i).segment(j * p, p) = W(i, j) * e;
      const MatrixXd ee = e.transpose() * e;
      psi.row(i).segment(st.dim_ab, st.dim_delta) = (vech(ee) - vd).transpose();
    }
    Eigen::LLT<MatrixXd> llt(cont.Delta);
    if (llt.info() != Eigen::Success)
      throw std::domain_error("sandwich_vrcl: Delta estimate is singular");
    st.Dinv = llt.solve(MatrixXd::Identity(p, p));
    st.b1 = st.Dinv * cont.A;
    st.beta = q > 0 ? cont.beta : MatrixXd(p, 0);
    st.Dp = duplication_matrix(p);
  }
  if (q > 0) {
    const MatrixXd Hinv = pinv_sym(parts.neg_hess, 1e-8, nullptr);
    psi.rightCols(st.dim_tau) = parts.scores * Hinv;
  }
  psi.rowwise() -= psi.colwise().mean();
  st.Sigma = psi.transpose() * psi / n;
  return st;
}

/// Jacobian rows of one column block of b over the influence stack.
/// which = 0: the m = p + q + k_q rows of b; 1: the p + q rows of c1;
/// 2: the q(q+1)/2 rows of c2 = tau.
MatrixXd influence_jacobian(const InfluenceStack& st, int which) {
  const int p = st.p, q = st.q, r = st.r;
  const int rows_per_col = which == 0 ? p + q + st.kq : (which == 1 ? p + q : st.mq);
  const int dim = static_cast<int>(st.Sigma.rows());
  MatrixXd J = MatrixXd::Zero(rows_per_col * r, dim);

  const MatrixXd BtD = q > 0 && p > 0 ? MatrixXd(st.beta.transpose() * st.Dinv)
                                      : MatrixXd(q, p);
  for (int k = 0; k < r; ++k) {
    const int row0 = k * rows_per_col;
    if (which != 2 && p > 0) {
      // X rows: b1 = Dinv A.
      J.block(row0, k * p, p, p) = st.Dinv;
      const MatrixXd dDelta =
          -kron(st.b1.col(k).transpose().eval(), st.Dinv) * st.Dp;  // p x m_p
      J.block(row0, st.dim_ab, p, st.dim_delta) = dDelta;
      if (q > 0) {
        // H rows: -(beta^T b1) plus, for b, the L_q tau term.
        J.block(row0 + p, k * p, q, p) = -BtD;
        for (int v = 0; v < q; ++v)
          for (int i = 0; i < p; ++i)
            J(row0 + p + v, (r + v) * p + i) = -st.b1(i, k);
        J.block(row0 + p, st.dim_ab, q, st.dim_delta) =
            kron(st.b1.col(k).transpose().eval(), BtD) * st.Dp;
      }
    }
    if (q > 0) {
      if (which == 0) {
        for (int v = 0; v < q; ++v)
          J(row0 + p + v, st.tau_col(k, vech_index(v, v, q))) += 1.0;
        int e = 0;
        for (int j = 0; j < q; ++j)
          for (int i = j + 1; i < q; ++i, ++e) {
            const int ve = vech_index(i, j, q);
            if (st.v2a[ve] >= 0) J(row0 + p + q + e, st.tau_col(k, ve)) = 1.0;
          }
      } else if (which == 2) {
        for (int ve = 0; ve < st.mq; ++ve)
          if (st.v2a[ve] >= 0) J(row0 + ve, st.tau_col(k, ve)) = 1.0;
      }
    }
  }
  return J;
}

MatrixXd sandwich_from_stack(const InfluenceStack& st, int which) {
  const MatrixXd J = influence_jacobian(st, which);
  MatrixXd V = J * st.Sigma * J.transpose();
  return 0.5 * (V + V.transpose());
}

}  // namespace

MatrixXd sandwich_vrcl(const Dataset& data, const FyBasis& fy, const ContinuousFit& cont,
                       const IsingFit& ising) {
  return sandwich_from_stack(build_influence(data, fy, cont, ising), 0);
}

namespace {

MatrixXd delta_inverse_times(const ContinuousFit& cont) {
  Eigen::LLT<MatrixXd> llt(cont.Delta);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("select_dimension: Delta estimate is singular");
  return llt.solve(cont.A);
}

/// Sequential loop shared by all branches: evaluates every candidate rank
/// for the report and keeps the smallest non-rejected one.
void run_rank_branch(const MatrixXd& bhat, const MatrixXd& Vb, RankTest test, double alpha,
                     int n, std::uint64_t seed, std::uint64_t branch_tag,
                     std::vector<RankTestResult>& decisions, int& selected,
                     bool& all_rejected, double q_pinv_tol) {
  const int jmax = static_cast<int>(std::min(bhat.rows(), bhat.cols()));
  const int rank_vb = rank_sym(Vb);
  bool found = false;
  for (int j = 0; j < jmax; ++j) {
    RankTestResult res;
    if (test == RankTest::weighted_chisq) {
      std::mt19937_64 rng(derive_seed(seed, branch_tag, static_cast<std::uint64_t>(j)));
      res = test_rank_weighted(bhat, Vb, j, alpha, n, rng, 10000, rank_vb);
    } else {
      res = test_rank_wald(bhat, Vb, j, alpha, n, rank_vb, q_pinv_tol);
    }
    decisions.push_back(res);
    if (!res.reject && !found) {
      selected = j;
      found = true;
    }
  }
  if (!found) {
    selected = jmax;
    all_rejected = true;
  }
}

}  // namespace

DimensionTestReport select_dimension(const Dataset& data, const FyBasis& fy,
                                     ReductionKind kind, RankTest test, double alpha,
                                     std::uint64_t seed, const DimensionTestOptions& opts) {
  data.validate();
  const int p = data.p(), q = data.q(), r = fy.r();
  if (kind == ReductionKind::optimal || kind == ReductionKind::suboptimal) {
    if (q == 0) kind = ReductionKind::pfc;
    if (p == 0) kind = ReductionKind::binary_only;
  }

  const ContinuousFit cont = fit_continuous(data, fy);
  const IsingFit ising =
      q > 0 ? (opts.screen_binary ? fit_ising_sparse(data, fy, opts.screen)
                                  : fit_ising(data, fy))
            : IsingFit{VectorXd(0), MatrixXd(0, r), true, 0, 0, 0};
  const int n = data.n();

  DimensionTestReport report;
  report.kind = kind;
  report.test = test;
  report.alpha = alpha;
  report.seed = seed;

  // Covariance route: empirical influence functions by default, inverse
  // information on request.
  const bool use_sandwich =
      opts.route == CovarianceRoute::sandwich ||
      (opts.route == CovarianceRoute::automatic && q > 0);
  InfluenceStack stack;
  MixedModelParams params;
  NaturalParams np;
  VEstimate V;
  if (use_sandwich) {
    stack = build_influence(data, fy, cont, ising);
  } else {
    params = to_model_params(cont, ising, p, q, r);
    np = natural_params(params);
    V = estimate_V(data, fy, params, kIsingEnumerationCap, opts.v_pinv_tol);
    report.v_rank_deficient = V.rank_deficient;
  }
  const Dims dims = Dims::make(p, q, r);

  switch (kind) {
    case ReductionKind::optimal: {
      const MatrixXd bhat = assemble_b(cont, ising);
      const MatrixXd Vb =
          use_sandwich ? sandwich_from_stack(stack, 0) : vrcl(V.V, p, q, r);
      run_rank_branch(bhat, Vb, test, alpha, n, seed, 0, report.decisions, report.d,
                      report.all_rejected, opts.q_pinv_tol);
      break;
    }
    case ReductionKind::pfc: {
      if (p == 0) throw std::invalid_argument("select_dimension: pfc requires p > 0");
      const MatrixXd bhat = delta_inverse_times(cont);
      MatrixXd Vb(p * r, p * r);
      if (use_sandwich) {
        const MatrixXd Vfull = sandwich_from_stack(stack, 0);
        const int m = dims.m;
        for (int a = 0; a < p * r; ++a)
          for (int b = 0; b < p * r; ++b)
            Vb(a, b) = Vfull((a / p) * m + a % p, (b / p) * m + b % p);
      } else {
        for (int a = 0; a < p * r; ++a)
          for (int b = 0; b < p * r; ++b)
            Vb(a, b) = V.V(np.dims.theta_off[0] + p + a, np.dims.theta_off[0] + p + b);
      }
      run_rank_branch(bhat, Vb, test, alpha, n, seed, 0, report.decisions, report.d,
                      report.all_rejected, opts.q_pinv_tol);
      break;
    }
    case ReductionKind::binary_only: {
      if (q == 0)
        throw std::invalid_argument("select_dimension: binary reduction requires q > 0");
      // b = (L_q tau; J_q tau) is a row permutation of c2 = tau.
      const MatrixXd C2 =
          use_sandwich ? sandwich_from_stack(stack, 2) : cov_c2(V, np);
      const int mb = q + dims.k_q;
      std::vector<int> rowmap(mb);
      for (int i = 0; i < q; ++i) rowmap[i] = vech_index(i, i, q);
      int pair = 0;
      for (int j = 0; j < q; ++j)
        for (int i = j + 1; i < q; ++i) rowmap[q + pair++] = vech_index(i, j, q);
      MatrixXd bhat(mb, r);
      MatrixXd Vb(mb * r, mb * r);
      for (int k = 0; k < r; ++k)
        for (int i = 0; i < mb; ++i) bhat(i, k) = ising.tau(rowmap[i], k);
      auto c2idx = [&](int flat) {
        const int k = flat / mb, i = flat % mb;
        return k * dims.m_q + rowmap[i];
      };
      for (int a = 0; a < mb * r; ++a)
        for (int b = 0; b < mb * r; ++b) Vb(a, b) = C2(c2idx(a), c2idx(b));
      run_rank_branch(bhat, Vb, test, alpha, n, seed, 0, report.decisions, report.d,
                      report.all_rejected, opts.q_pinv_tol);
      break;
    }
    case ReductionKind::suboptimal: {
      report.has_second_branch = true;
      auto [c1, c2] = assemble_c(cont, ising);
      const MatrixXd Vc1 =
          use_sandwich ? sandwich_from_stack(stack, 1) : cov_c1(V, np);
      const MatrixXd Vc2 =
          use_sandwich ? sandwich_from_stack(stack, 2) : cov_c2(V, np);
      run_rank_branch(c1, Vc1, test, alpha, n, seed, 1, report.decisions, report.d,
                      report.all_rejected, opts.q_pinv_tol);
      run_rank_branch(c2, Vc2, test, alpha, n, seed, 2, report.decisions2, report.d2,
                      report.all_rejected2, opts.q_pinv_tol);
      break;
    }
  }
  return report;
}

RankTestResult test_rank_weighted(const MatrixXd& bhat, const MatrixXd& Vrcl, int j,
                                  double alpha, int n, std::mt19937_64& rng, int nsim,
                                  int vrcl_rank) {
  check_rank_args(bhat, Vrcl, j);
  const int m = static_cast<int>(bhat.rows());
  const int r = static_cast<int>(bhat.cols());
  const SvdParts svd = svd_truncate(bhat, j);

  RankTestResult res;
  res.j = j;
  double lambda = 0.0;
  for (int i = j; i < std::min(m, r); ++i) lambda += svd.sing(i) * svd.sing(i);
  res.stat = n * lambda;

  const MatrixXd Q = qhat_matrix(svd, Vrcl, j);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(Q, Eigen::EigenvaluesOnly);
  VectorXd ev = es.eigenvalues().reverse();  // descending
  if (vrcl_rank < 0) vrcl_rank = rank_sym(Vrcl);
  res.s = std::min(vrcl_rank, (r - j) * (m - j));

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> draws(nsim);
  for (int t = 0; t < nsim; ++t) {
    double acc = 0.0;
    for (int i = 0; i < res.s; ++i) {
      const double w = std::max(ev(i), 0.0);
      const double z = gauss(rng);
      acc += w * z * z;
    }
    draws[t] = acc;
  }
  std::sort(draws.begin(), draws.end());
  const int pos = std::min<int>(nsim - 1, static_cast<int>(std::ceil((1.0 - alpha) * nsim)) - 1);
  res.critical = draws[std::max(pos, 0)];
  res.reject = res.stat > res.critical;
  return res;
}

RankTestResult test_rank_wald(const MatrixXd& bhat, const MatrixXd& Vrcl, int j,
                              double alpha, int n, int vrcl_rank, double q_pinv_tol) {
  check_rank_args(bhat, Vrcl, j);
  const int m = static_cast<int>(bhat.rows());
  const int r = static_cast<int>(bhat.cols());
  const SvdParts svd = svd_truncate(bhat, j);

  MatrixXd K0 = MatrixXd::Zero(m - j, r - j);
  for (int i = j; i < std::min(m, r); ++i) K0(i - j, i - j) = svd.sing(i);
  const Eigen::Map<const VectorXd> k0(K0.data(), K0.size());

  const MatrixXd Q = qhat_matrix(svd, Vrcl, j);
  const MatrixXd Qdag = pinv_sym(Q, q_pinv_tol, nullptr);

  RankTestResult res;
  res.j = j;
  res.stat = n * k0.dot(Qdag * k0);
  if (vrcl_rank < 0) vrcl_rank = rank_sym(Vrcl);
  res.s = std::min(vrcl_rank, (r - j) * (m - j));
  if (res.s == 0) {
    res.critical = 0.0;
    res.reject = false;
    return res;
  }
  res.critical = chi_squared_quantile(1.0 - alpha, res.s);
  res.reject = res.stat > res.critical;
  return res;
}

double chi_squared_quantile(double prob, int dof) {
  return boost::math::quantile(boost::math::chi_squared(dof), prob);
}

MatrixXd projection_covariance(const MatrixXd& bhat, const MatrixXd& Vrcl, int d) {
  const int m = static_cast<int>(bhat.rows());
  const int r = static_cast<int>(bhat.cols());
  if (d < 1 || d > std::min(m, r))
    throw std::invalid_argument("projection_covariance: d out of range");
  const SvdParts svd = svd_truncate(bhat, d);
  if (svd.sing(d - 1) <= 1e-10 * std::max(svd.sing(0), 1e-300))
    throw std::invalid_argument("projection_covariance: rank of b-hat below d");

  const MatrixXd U1 = svd.U1();
  const MatrixXd binv =
      svd.R1() * svd.sing.head(d).cwiseInverse().asDiagonal() * U1.transpose();  // r x m
  const MatrixXd Qb = MatrixXd::Identity(m, m) - U1 * U1.transpose();
  const MatrixXd T = kron(binv.transpose(), Qb);  // m^2 x rm
  MatrixXd Vp = T * Vrcl * T.transpose();

  // Apply (I + K_mm) on both sides as a row/column permutation-sum.
  auto add_commuted_rows = [m](const MatrixXd& M) {
    MatrixXd out = M;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) out.row(i + m * j) += M.row(j + m * i);
    return out;
  };
  Vp = add_commuted_rows(Vp);
  Vp = add_commuted_rows(Vp.transpose()).transpose();
  return 0.5 * (Vp + Vp.transpose());
}

}  // namespace mixsdr
