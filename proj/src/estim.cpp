#include "mixsdr/estim.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace mixsdr {

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Per-variable logistic designs for the joint pseudo-likelihood. Column
/// (v, k) of design j carries (v == j ? 1 : h_iv) scaled by f_{y_i, k-1}
/// (k = 0 is the intercept block); the shared parameter behind it is the
/// vech coordinate of the unordered pair {j, v}.
struct PseudoDesign {
  int n = 0, q = 0, r = 0, m_q = 0;
  std::vector<MatrixXd> D;               // per j: n x q(1+r)
  std::vector<std::vector<int>> colmap;  // per j: local column -> theta index
  const MatrixXd* H = nullptr;

  int dim() const { return n_active * (1 + r); }

  // Active vech coordinates (diagonals always; pairs maskable) and their
  // compressed indexing.
  std::vector<int> vech_to_active;  // m_q entries, -1 when masked out
  std::vector<int> active_vech;     // inverse list
  int n_active = 0;

  static PseudoDesign build(const Dataset& data, const FyBasis& fy,
                            const std::vector<char>* pair_active = nullptr) {
    PseudoDesign pd;
    pd.n = data.n();
    pd.q = data.q();
    pd.r = fy.r();
    pd.m_q = vech_size(pd.q);
    pd.H = &data.H;
    const MatrixXd F = fy.centered_matrix(data.y);
    for (int j = 0; j < pd.q; ++j) {
      const auto col = data.H.col(j);
      const double first = col(0);
      bool constant = true;
      for (int i = 1; i < pd.n && constant; ++i) constant = col(i) == first;
      if (constant)
        throw std::invalid_argument("fit_ising: H column " + std::to_string(j) +
                                    " is constant in the sample");
    }
    pd.vech_to_active.assign(pd.m_q, -1);
    for (int j = 0; j < pd.q; ++j)
      for (int i = j; i < pd.q; ++i) {
        const bool keep =
            i == j || !pair_active ||
            (*pair_active)[i - j - 1 + j * (pd.q - 1) - j * (j - 1) / 2];
        if (keep) {
          pd.vech_to_active[vech_index(i, j, pd.q)] = pd.n_active++;
          pd.active_vech.push_back(vech_index(i, j, pd.q));
        }
      }
    pd.D.resize(pd.q);
    pd.colmap.resize(pd.q);
    for (int j = 0; j < pd.q; ++j) {
      std::vector<int> partners;
      for (int v = 0; v < pd.q; ++v) {
        const int vidx = vech_index(std::max(j, v), std::min(j, v), pd.q);
        if (pd.vech_to_active[vidx] >= 0) partners.push_back(v);
      }
      const int np = static_cast<int>(partners.size());
      MatrixXd Dj(pd.n, np * (1 + pd.r));
      std::vector<int> map(np * (1 + pd.r));
      for (int c = 0; c < np; ++c) {
        const int v = partners[c];
        const int vidx = vech_index(std::max(j, v), std::min(j, v), pd.q);
        for (int k = 0; k <= pd.r; ++k) {
          const int local = k * np + c;
          map[local] = k * pd.n_active + pd.vech_to_active[vidx];
          for (int i = 0; i < pd.n; ++i) {
            const double base = v == j ? 1.0 : data.H(i, v);
            Dj(i, local) = k == 0 ? base : F(i, k - 1) * base;
          }
        }
      }
      pd.D[j] = std::move(Dj);
      pd.colmap[j] = std::move(map);
    }
    return pd;
  }

  VectorXd local_theta(int j, const VectorXd& theta) const {
    VectorXd loc(colmap[j].size());
    for (size_t c = 0; c < colmap[j].size(); ++c) loc(c) = theta(colmap[j][c]);
    return loc;
  }

  double loglik(const VectorXd& theta) const {
    double acc = 0.0;
    for (int j = 0; j < q; ++j) {
      const VectorXd eps = D[j] * local_theta(j, theta);
      for (int i = 0; i < n; ++i) acc += (*H)(i, j) * eps(i) - softplus(eps(i));
    }
    return acc / n;
  }

  void grad_hess(const VectorXd& theta, VectorXd* grad, MatrixXd* neg_hess) const {
    if (grad) grad->setZero(dim());
    if (neg_hess) neg_hess->setZero(dim(), dim());
    for (int j = 0; j < q; ++j) {
      const VectorXd eps = D[j] * local_theta(j, theta);
      VectorXd resid(n), w(n);
      for (int i = 0; i < n; ++i) {
        const double s = sigmoid(eps(i));
        resid(i) = (*H)(i, j) - s;
        w(i) = s * (1.0 - s);
      }
      if (grad) {
        const VectorXd gl = D[j].transpose() * resid;
        for (size_t c = 0; c < colmap[j].size(); ++c) (*grad)(colmap[j][c]) += gl(c);
      }
      if (neg_hess) {
        const MatrixXd Hl = D[j].transpose() * w.asDiagonal() * D[j];
        const auto& map = colmap[j];
        for (size_t a = 0; a < map.size(); ++a)
          for (size_t b = 0; b < map.size(); ++b) (*neg_hess)(map[a], map[b]) += Hl(a, b);
      }
    }
    if (grad) *grad /= n;
    if (neg_hess) *neg_hess /= n;
  }
};

VectorXd pack_theta(const VectorXd& tau0, const MatrixXd& tau) {
  VectorXd theta(tau0.size() + tau.size());
  theta.head(tau0.size()) = tau0;
  theta.tail(tau.size()) = Eigen::Map<const VectorXd>(tau.data(), tau.size());
  return theta;
}

MatrixXd delta_inverse(const MatrixXd& Delta) {
  Eigen::LLT<MatrixXd> llt(Delta);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("assemble: Delta estimate is singular or not SPD");
  return llt.solve(MatrixXd::Identity(Delta.rows(), Delta.cols()));
}

MatrixXd diag_rows(const MatrixXd& tau, int q) {
  MatrixXd out(q, tau.cols());
  for (int i = 0; i < q; ++i) out.row(i) = tau.row(vech_index(i, i, q));
  return out;
}

MatrixXd lower_rows(const MatrixXd& tau, int q) {
  MatrixXd out(strict_lower_size(q), tau.cols());
  int row = 0;
  for (int j = 0; j < q; ++j)
    for (int i = j + 1; i < q; ++i) out.row(row++) = tau.row(vech_index(i, j, q));
  return out;
}

}  // namespace

ContinuousFit fit_continuous(const Dataset& data, const FyBasis& fy,
                             const ContinuousFitOptions& opts) {
  data.validate();
  const int n = data.n(), p = data.p(), q = data.q(), r = fy.r();
  ContinuousFit fit;
  fit.f_mean = VectorXd::Zero(r);  // basis is stored centered
  fit.h_mean = q > 0 ? VectorXd(data.H.colwise().mean()) : VectorXd(0);
  fit.x_mean = p > 0 ? VectorXd(data.X.colwise().mean()) : VectorXd(0);
  if (p == 0) {
    fit.A.resize(0, r);
    fit.beta.resize(0, q);
    fit.Delta.resize(0, 0);
    fit.residuals.resize(n, 0);
    return fit;
  }

  const MatrixXd F = fy.centered_matrix(data.y);
  MatrixXd L(n, r + q);
  L.leftCols(r) = F;
  if (q > 0) L.rightCols(q) = data.H.rowwise() - fit.h_mean.transpose();
  const MatrixXd Xc = data.X.rowwise() - fit.x_mean.transpose();

  MatrixXd G = L.transpose() * L;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
  const double lmax = es.eigenvalues().maxCoeff();
  if (n <= r + q || es.eigenvalues().minCoeff() <= 1e-12 * std::max(lmax, 1e-300)) {
    if (!opts.ridge)
      throw std::runtime_error("fit_continuous: rank-deficient design matrix");
    G += (opts.ridge_scale * G.trace() / (r + q)) * MatrixXd::Identity(r + q, r + q);
  }
  Eigen::LLT<MatrixXd> llt(G);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("fit_continuous: design normal matrix not positive definite");
  const MatrixXd Z = llt.solve(L.transpose() * Xc);  // (r+q) x p
  fit.A = Z.topRows(r).transpose();
  fit.beta = q > 0 ? MatrixXd(Z.bottomRows(q).transpose()) : MatrixXd(p, 0);
  fit.residuals = Xc - L * Z;
  fit.Delta = fit.residuals.transpose() * fit.residuals / n;
  return fit;
}

namespace {

struct NewtonOut {
  VectorXd theta;
  bool converged = false;
  double obj = 0.0;
  double gnorm = 0.0;
  int iterations = 0;
};

NewtonOut newton_maximize(const PseudoDesign& pd, const IsingFitOptions& opts) {
  const int dim = pd.dim();
  NewtonOut out;
  VectorXd theta = VectorXd::Zero(dim);
  double obj = pd.loglik(theta);
  VectorXd grad(dim);
  MatrixXd neg_hess(dim, dim);
  VectorXd best_theta = theta;
  double best_obj = obj;
  double gnorm = 0.0;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    pd.grad_hess(theta, &grad, &neg_hess);
    gnorm = grad.cwiseAbs().maxCoeff();
    if (gnorm <= opts.tol) {
      out.converged = true;
      break;
    }
    neg_hess.diagonal().array() += 1e-10 * (1.0 + neg_hess.trace() / dim);
    Eigen::LDLT<MatrixXd> ldlt(neg_hess);
    VectorXd dir = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || dir.dot(grad) <= 0.0) dir = grad;
    const double slope = dir.dot(grad);
    double t = 1.0;
    double cand_obj = obj;
    VectorXd cand;
    bool improved = false;
    for (int half = 0; half < 50; ++half) {
      cand = theta + t * dir;
      cand_obj = pd.loglik(cand);
      if (cand_obj >= obj + 1e-4 * t * slope) {
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
    theta = cand;
    obj = cand_obj;
    if (obj > best_obj) {
      best_obj = obj;
      best_theta = theta;
    }
  }
  if (!out.converged) {
    theta = best_theta;
    obj = best_obj;
    pd.grad_hess(theta, &grad, nullptr);
    gnorm = grad.cwiseAbs().maxCoeff();
    out.converged = gnorm <= opts.tol;
  }
  out.theta = std::move(theta);
  out.obj = obj;
  out.gnorm = gnorm;
  out.iterations = it;
  return out;
}

IsingFit unpack_fit(const PseudoDesign& pd, const NewtonOut& opt_out, int r) {
  IsingFit fit;
  fit.tau0 = VectorXd::Zero(pd.m_q);
  fit.tau = MatrixXd::Zero(pd.m_q, r);
  for (int a = 0; a < pd.n_active; ++a) {
    const int ve = pd.active_vech[a];
    fit.tau0(ve) = opt_out.theta(a);
    for (int k = 0; k < r; ++k) fit.tau(ve, k) = opt_out.theta((k + 1) * pd.n_active + a);
  }
  fit.converged = opt_out.converged;
  fit.pseudo_loglik = opt_out.obj;
  fit.grad_norm = opt_out.gnorm;
  fit.iterations = opt_out.iterations;
  return fit;
}

}  // namespace

IsingFit fit_ising(const Dataset& data, const FyBasis& fy, const IsingFitOptions& opts) {
  data.validate();
  const int q = data.q(), r = fy.r();
  if (q == 0) {
    IsingFit fit;
    fit.tau0.resize(0);
    fit.tau.resize(0, r);
    fit.converged = true;
    return fit;
  }
  const PseudoDesign pd = PseudoDesign::build(data, fy);
  return unpack_fit(pd, newton_maximize(pd, opts), r);
}

IsingFit fit_ising_sparse(const Dataset& data, const FyBasis& fy,
                          const SparseIsingOptions& opts) {
  data.validate();
  const int q = data.q(), r = fy.r();
  if (q <= 1) return fit_ising(data, fy, opts.refit);
  const int n = data.n();
  const int kq = strict_lower_size(q);
  const PseudoDesign pd = PseudoDesign::build(data, fy);
  const int dim = pd.dim();
  const double lambda =
      opts.lambda >= 0.0
          ? opts.lambda
          : opts.c * std::sqrt(std::log(static_cast<double>(vech_size(q))) / n);

  // Group layout: pair e owns coordinates {k * m_q + e-vech : k = 0..r}.
  std::vector<std::vector<int>> groups(kq);
  {
    int e = 0;
    for (int j = 0; j < q; ++j)
      for (int i = j + 1; i < q; ++i, ++e)
        for (int k = 0; k <= r; ++k)
          groups[e].push_back(k * pd.m_q + vech_index(i, j, q));
  }

  // Lipschitz bound of the mean negative pseudo-log-likelihood gradient via
  // power iteration on sum_j D_j^T D_j / (4 n).
  double L = 1e-8;
  {
    VectorXd v = VectorXd::Ones(dim).normalized();
    for (int it = 0; it < 30; ++it) {
      VectorXd u = VectorXd::Zero(dim);
      for (int j = 0; j < q; ++j) {
        VectorXd loc(pd.colmap[j].size());
        for (size_t c = 0; c < pd.colmap[j].size(); ++c) loc(c) = v(pd.colmap[j][c]);
        const VectorXd t = pd.D[j].transpose() * (pd.D[j] * loc);
        for (size_t c = 0; c < pd.colmap[j].size(); ++c) u(pd.colmap[j][c]) += t(c);
      }
      u /= 4.0 * n;
      L = std::max(u.norm(), 1e-8);
      v = u.normalized();
    }
  }
  const double step = 1.0 / L;

  auto penalty = [&](const VectorXd& theta) {
    double pen = 0.0;
    for (const auto& g : groups) {
      double s2 = 0.0;
      for (int c : g) s2 += theta(c) * theta(c);
      pen += std::sqrt(s2);
    }
    return lambda * pen;
  };
  auto prox = [&](VectorXd& theta, double thr) {
    for (const auto& g : groups) {
      double s2 = 0.0;
      for (int c : g) s2 += theta(c) * theta(c);
      const double nrm = std::sqrt(s2);
      const double scale = nrm <= thr ? 0.0 : 1.0 - thr / nrm;
      for (int c : g) theta(c) *= scale;
    }
  };
  auto smooth_grad = [&](const VectorXd& theta, double* obj) {
    VectorXd grad;
    pd.grad_hess(theta, &grad, nullptr);
    if (obj) *obj = -pd.loglik(theta);
    return VectorXd(-grad);
  };

  VectorXd x = VectorXd::Zero(dim), yv = x;
  double t = 1.0;
  double fx;
  smooth_grad(x, &fx);
  fx += penalty(x);
  for (int it = 0; it < opts.max_iter; ++it) {
    VectorXd g = smooth_grad(yv, nullptr);
    VectorXd z = yv - step * g;
    prox(z, step * lambda);
    double fz;
    smooth_grad(z, &fz);
    fz += penalty(z);
    if (fz > fx) {
      g = smooth_grad(x, nullptr);
      z = x - step * g;
      prox(z, step * lambda);
      smooth_grad(z, &fz);
      fz += penalty(z);
      t = 1.0;
      yv = z;
    } else {
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      yv = z + ((t - 1.0) / tn) * (z - x);
      t = tn;
    }
    const double prev = fx;
    x = std::move(z);
    fx = fz;
    if (std::abs(prev - fx) <= opts.tol * std::max(1.0, std::abs(prev))) break;
  }

  // Support of the screened pairs, then an unpenalized refit on it.
  std::vector<char> pair_active(kq, 0);
  {
    int e = 0;
    for (int j = 0; j < q; ++j)
      for (int i = j + 1; i < q; ++i, ++e) {
        double s2 = 0.0;
        for (int c : groups[e]) s2 += x(c) * x(c);
        pair_active[e] = std::sqrt(s2) > 1e-10;
      }
  }
  const PseudoDesign pd_masked = PseudoDesign::build(data, fy, &pair_active);
  return unpack_fit(pd_masked, newton_maximize(pd_masked, opts.refit), r);
}

IsingScoreParts ising_score_parts(const Dataset& data, const FyBasis& fy,
                                  const IsingFit& fit) {
  const int q = data.q(), r = fy.r();
  IsingScoreParts parts;
  if (q == 0) {
    parts.scores.resize(data.n(), 0);
    parts.neg_hess.resize(0, 0);
    return parts;
  }
  std::vector<char> pair_active(strict_lower_size(q), 0);
  {
    int e = 0;
    for (int j = 0; j < q; ++j)
      for (int i = j + 1; i < q; ++i, ++e) {
        const int ve = vech_index(i, j, q);
        pair_active[e] = fit.tau0(ve) != 0.0 || fit.tau.row(ve).norm() > 0.0;
      }
  }
  const PseudoDesign pd = PseudoDesign::build(data, fy, &pair_active);
  const int n = pd.n, dim = pd.dim();
  VectorXd theta(dim);
  for (int a = 0; a < pd.n_active; ++a) {
    const int ve = pd.active_vech[a];
    theta(a) = fit.tau0(ve);
    for (int k = 0; k < r; ++k) theta((k + 1) * pd.n_active + a) = fit.tau(ve, k);
  }
  parts.scores = MatrixXd::Zero(n, dim);
  parts.neg_hess = MatrixXd::Zero(dim, dim);
  for (int j = 0; j < q; ++j) {
    const VectorXd eps = pd.D[j] * pd.local_theta(j, theta);
    for (int i = 0; i < n; ++i) {
      const double sg = 1.0 / (1.0 + std::exp(-eps(i)));
      const double resid = data.H(i, j) - sg;
      const double w = sg * (1.0 - sg);
      for (size_t a = 0; a < pd.colmap[j].size(); ++a) {
        parts.scores(i, pd.colmap[j][a]) += pd.D[j](i, a) * resid;
        for (size_t b = 0; b < pd.colmap[j].size(); ++b)
          parts.neg_hess(pd.colmap[j][a], pd.colmap[j][b]) +=
              w * pd.D[j](i, a) * pd.D[j](i, b);
      }
    }
  }
  parts.neg_hess /= n;
  parts.active_vech = pd.active_vech;
  return parts;
}

double ising_pseudo_loglik(const Dataset& data, const FyBasis& fy, const VectorXd& tau0,
                           const MatrixXd& tau) {
  return PseudoDesign::build(data, fy).loglik(pack_theta(tau0, tau));
}

VectorXd ising_pseudo_grad(const Dataset& data, const FyBasis& fy, const VectorXd& tau0,
                           const MatrixXd& tau) {
  const PseudoDesign pd = PseudoDesign::build(data, fy);
  VectorXd grad;
  pd.grad_hess(pack_theta(tau0, tau), &grad, nullptr);
  return grad;
}

MixedModelParams to_model_params(const ContinuousFit& cont, const IsingFit& ising, int p,
                                 int q, int r) {
  MixedModelParams params;
  params.Delta = p > 0 ? cont.Delta : MatrixXd(0, 0);
  params.mu_X = p > 0 ? cont.x_mean : VectorXd(0);
  params.mu_H = q > 0 ? cont.h_mean : VectorXd(0);
  params.A = p > 0 ? cont.A : MatrixXd::Zero(0, r);
  params.beta = p > 0 && q > 0 ? cont.beta : MatrixXd::Zero(p, q);
  params.tau0 = q > 0 ? ising.tau0 : VectorXd(0);
  params.tau = q > 0 ? ising.tau : MatrixXd::Zero(0, r);
  return params;
}

MatrixXd assemble_b(const ContinuousFit& cont, const IsingFit& ising) {
  const int p = static_cast<int>(cont.A.rows());
  const int q = p > 0 ? static_cast<int>(cont.beta.cols())
                      : static_cast<int>(std::round(
                            (std::sqrt(8.0 * ising.tau0.size() + 1.0) - 1.0) / 2.0));
  const int r = p > 0 ? static_cast<int>(cont.A.cols()) : static_cast<int>(ising.tau.cols());
  const int kq = strict_lower_size(q);
  MatrixXd b(p + q + kq, r);
  if (p > 0) {
    const MatrixXd DinvA = delta_inverse(cont.Delta) * cont.A;
    b.topRows(p) = DinvA;
    if (q > 0) {
      b.middleRows(p, q) = diag_rows(ising.tau, q) - cont.beta.transpose() * DinvA;
      if (kq > 0) b.bottomRows(kq) = lower_rows(ising.tau, q);
    }
  } else {
    b.topRows(q) = diag_rows(ising.tau, q);
    if (kq > 0) b.bottomRows(kq) = lower_rows(ising.tau, q);
  }
  return b;
}

std::pair<MatrixXd, MatrixXd> assemble_c(const ContinuousFit& cont, const IsingFit& ising) {
  const int p = static_cast<int>(cont.A.rows());
  const int q = static_cast<int>(cont.beta.cols());
  const int r = static_cast<int>(cont.A.cols());
  MatrixXd c1(p + q, r);
  if (p > 0) {
    const MatrixXd DinvA = delta_inverse(cont.Delta) * cont.A;
    c1.topRows(p) = DinvA;
    if (q > 0) c1.bottomRows(q) = -cont.beta.transpose() * DinvA;
  }
  return {c1, ising.tau};
}

MatrixXd SvdParts::B() const {
  return sing.head(d).asDiagonal() * V.leftCols(d).transpose();
}

MatrixXd SvdParts::truncated() const { return U.leftCols(d) * B(); }

SvdParts svd_truncate(const MatrixXd& M, int d) {
  const int m = static_cast<int>(M.rows());
  const int r = static_cast<int>(M.cols());
  if (d < 0 || d > std::min(m, r))
    throw std::invalid_argument("svd_truncate: rank out of range");
  Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SvdParts parts;
  parts.U = svd.matrixU();
  parts.V = svd.matrixV();
  parts.sing = svd.singularValues();
  parts.d = d;
  const int k = static_cast<int>(parts.sing.size());
  auto flip_to_positive = [](MatrixXd& A, int col) {
    int arg = 0;
    A.col(col).cwiseAbs().maxCoeff(&arg);
    return A(arg, col) < 0.0;
  };
  for (int i = 0; i < k; ++i)
    if (flip_to_positive(parts.U, i)) {
      parts.U.col(i) = -parts.U.col(i);
      parts.V.col(i) = -parts.V.col(i);
    }
  for (int i = k; i < m; ++i)
    if (flip_to_positive(parts.U, i)) parts.U.col(i) = -parts.U.col(i);
  for (int i = k; i < r; ++i)
    if (flip_to_positive(parts.V, i)) parts.V.col(i) = -parts.V.col(i);
  return parts;
}

VectorXd ReductionModel::statistic(const VectorXd& x, const VectorXd& h) const {
  if (x.size() != p || h.size() != q)
    throw std::invalid_argument("apply_reduction: dimension mismatch");
  switch (kind) {
    case ReductionKind::optimal:
      return stat_t(x, h);
    case ReductionKind::suboptimal:
      return stat_w(x, h);
    case ReductionKind::pfc:
      return x;
    case ReductionKind::binary_only:
      return stat_s(h);
  }
  return VectorXd(0);
}

ReductionModel fit_sdr(const Dataset& data, const FyBasis& fy, ReductionKind kind, int d,
                       int d2) {
  data.validate();
  const int p = data.p(), q = data.q(), r = fy.r();

  ReductionModel model;
  model.p = p;
  model.q = q;
  // Degenerate predictor blocks collapse optimal / suboptimal reductions to
  // their single-block special cases.
  if (kind == ReductionKind::optimal || kind == ReductionKind::suboptimal) {
    if (q == 0) kind = ReductionKind::pfc;
    if (p == 0) kind = ReductionKind::binary_only;
  }
  model.kind = kind;

  model.cont = fit_continuous(data, fy);
  model.ising = q > 0 ? fit_ising(data, fy) : IsingFit{VectorXd(0), MatrixXd(0, r), true, 0, 0, 0};

  const int kq = strict_lower_size(q);
  const int m_q = vech_size(q);
  switch (kind) {
    case ReductionKind::optimal: {
      const int m = p + q + kq;
      if (d < 0 || d > std::min(r, m))
        throw std::invalid_argument("fit_sdr: dimension out of range");
      SvdParts svd = svd_truncate(assemble_b(model.cont, model.ising), d);
      model.alpha = svd.U1();
      model.sing = svd.sing;
      model.d = d;
      break;
    }
    case ReductionKind::suboptimal: {
      const int d1 = d;
      if (d2 < 0) d2 = d;
      if (d1 < 0 || d1 > std::min(r, p) || d2 < 0 || d2 > std::min(r, m_q))
        throw std::invalid_argument("fit_sdr: dimension out of range");
      auto [c1, c2] = assemble_c(model.cont, model.ising);
      if (c2.norm() <= 1e-10) d2 = 0;  // binary block numerically absent
      SvdParts s1 = svd_truncate(c1, d1);
      SvdParts s2 = svd_truncate(c2, d2);
      model.alpha = MatrixXd::Zero(p + q + m_q, d1 + d2);
      model.alpha.block(0, 0, p + q, d1) = s1.U1();
      model.alpha.block(p + q, d1, m_q, d2) = s2.U1();
      model.sing = s1.sing;
      model.sing2 = s2.sing;
      model.d1 = d1;
      model.d2 = d2;
      model.d = d1 + d2;
      break;
    }
    case ReductionKind::pfc: {
      if (p == 0) throw std::invalid_argument("fit_sdr: pfc requires continuous predictors");
      if (d < 0 || d > std::min(r, p))
        throw std::invalid_argument("fit_sdr: dimension out of range");
      SvdParts svd = svd_truncate(delta_inverse(model.cont.Delta) * model.cont.A, d);
      model.alpha = svd.U1();
      model.sing = svd.sing;
      model.d = d;
      break;
    }
    case ReductionKind::binary_only: {
      if (q == 0) throw std::invalid_argument("fit_sdr: binary reduction requires binary predictors");
      if (d < 0 || d > std::min(r, q + kq))
        throw std::invalid_argument("fit_sdr: dimension out of range");
      MatrixXd b(q + kq, r);
      b.topRows(q) = diag_rows(model.ising.tau, q);
      if (kq > 0) b.bottomRows(kq) = lower_rows(model.ising.tau, q);
      SvdParts svd = svd_truncate(b, d);
      model.alpha = svd.U1();
      model.sing = svd.sing;
      model.d = d;
      break;
    }
  }

  // Training mean of the statistic the reduction centers on.
  model.stat_mean = VectorXd::Zero(model.stat_dim());
  for (int i = 0; i < data.n(); ++i)
    model.stat_mean +=
        model.statistic(p > 0 ? VectorXd(data.X.row(i)) : VectorXd(0),
                        q > 0 ? VectorXd(data.H.row(i)) : VectorXd(0));
  model.stat_mean /= data.n();
  return model;
}

VectorXd apply_reduction(const ReductionModel& model, const VectorXd& x, const VectorXd& h) {
  return model.alpha.transpose() * (model.statistic(x, h) - model.stat_mean);
}

MatrixXd apply_reduction_all(const ReductionModel& model, const Dataset& data) {
  MatrixXd out(data.n(), model.d);
  for (int i = 0; i < data.n(); ++i)
    out.row(i) = apply_reduction(model,
                                 data.p() > 0 ? VectorXd(data.X.row(i)) : VectorXd(0),
                                 data.q() > 0 ? VectorXd(data.H.row(i)) : VectorXd(0))
                     .transpose();
  return out;
}

}  // namespace mixsdr
