#include "mixsdr/matops.hpp"

#include <stdexcept>

#include <Eigen/SVD>

namespace mixsdr {

VectorXd vech(const MatrixXd& G) {
  const int q = static_cast<int>(G.rows());
  VectorXd v(vech_size(q));
  for (int j = 0; j < q; ++j)
    for (int i = j; i < q; ++i) v(vech_index(i, j, q)) = G(i, j);
  return v;
}

MatrixXd unvech(const VectorXd& v) {
  // Solve q(q+1)/2 = len for q.
  const int len = static_cast<int>(v.size());
  int q = static_cast<int>((std::sqrt(8.0 * len + 1.0) - 1.0) / 2.0 + 0.5);
  if (vech_size(q) != len) throw std::invalid_argument("unvech: length is not triangular");
  MatrixXd G(q, q);
  for (int j = 0; j < q; ++j)
    for (int i = j; i < q; ++i) G(i, j) = G(j, i) = v(vech_index(i, j, q));
  return G;
}

MatrixXd duplication_matrix(int q) {
  if (q < 1) throw std::invalid_argument("duplication_matrix: q must be >= 1");
  MatrixXd D = MatrixXd::Zero(q * q, vech_size(q));
  for (int j = 0; j < q; ++j)
    for (int i = 0; i < q; ++i)
      D(i + q * j, vech_index(std::max(i, j), std::min(i, j), q)) = 1.0;
  return D;
}

SelectorMatrices selector_matrices(int q) {
  if (q < 1) throw std::invalid_argument("selector_matrices: q must be >= 1");
  const int mq = vech_size(q);
  SelectorMatrices S;
  S.C = MatrixXd::Zero(mq, q * q);
  S.L = MatrixXd::Zero(q, mq);
  S.J = MatrixXd::Zero(strict_lower_size(q), mq);
  int off = 0;
  for (int j = 0; j < q; ++j) {
    for (int i = j; i < q; ++i) {
      const int row = vech_index(i, j, q);
      if (i == j) {
        S.C(row, i + q * j) = 1.0;
        S.L(i, row) = 1.0;
      } else {
        S.C(row, i + q * j) = 0.5;
        S.C(row, j + q * i) = 0.5;
        S.J(off++, row) = 1.0;
      }
    }
  }
  return S;
}

MatrixXd commutation_matrix(int p, int m) {
  if (p < 1 || m < 1) throw std::invalid_argument("commutation_matrix: dims must be >= 1");
  MatrixXd K = MatrixXd::Zero(p * m, p * m);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < m; ++j) K(j + m * i, i + p * j) = 1.0;
  return K;
}

MatrixXd pinv(const MatrixXd& M, double tol) {
  if (M.size() == 0) return MatrixXd(M.cols(), M.rows());
  Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double cut = s.size() > 0 ? tol * s(0) : 0.0;
  VectorXd inv = VectorXd::Zero(s.size());
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > cut && s(i) > 0.0) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

int numerical_rank(const MatrixXd& M, double tol) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(M);
  const VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  const double cut = tol * s(0);
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > cut) ++r;
  return r;
}

MatrixXd projection(const MatrixXd& B, double tol) {
  const MatrixXd Q = orth(B, tol);
  if (Q.cols() == 0) return MatrixXd::Zero(B.rows(), B.rows());
  return Q * Q.transpose();
}

MatrixXd orth(const MatrixXd& B, double tol) {
  if (B.size() == 0 || B.norm() == 0.0) return MatrixXd(B.rows(), 0);
  Eigen::JacobiSVD<MatrixXd> svd(B, Eigen::ComputeThinU);
  const VectorXd& s = svd.singularValues();
  const double cut = tol * s(0);
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > cut) ++r;
  return svd.matrixU().leftCols(r);
}

OperatorMatrices OperatorMatrices::make(int p, int q) {
  OperatorMatrices om;
  om.p = p;
  om.q = q;
  if (q >= 1) {
    om.Dq = duplication_matrix(q);
    SelectorMatrices S = selector_matrices(q);
    om.Cq = std::move(S.C);
    om.Lq = std::move(S.L);
    om.Jq = std::move(S.J);
  } else {
    om.Dq = MatrixXd(0, 0);
    om.Cq = MatrixXd(0, 0);
    om.Lq = MatrixXd(0, 0);
    om.Jq = MatrixXd(0, 0);
  }
  om.Dp = p >= 1 ? duplication_matrix(p) : MatrixXd(0, 0);
  return om;
}

}  // namespace mixsdr
