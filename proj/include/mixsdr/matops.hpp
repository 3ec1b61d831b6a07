#pragma once

#include <Eigen/Dense>

// Dense vec/vech operator matrices and small spectral utilities.
// vech ordering is column-major over the lower triangle including the
// diagonal: (g11, g21, ..., gq1, g22, g32, ...).

namespace mixsdr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline int vech_size(int q) { return q * (q + 1) / 2; }
inline int strict_lower_size(int q) { return q * (q - 1) / 2; }

/// Position of (i,j), i >= j, in the vech of a q x q symmetric matrix.
inline int vech_index(int i, int j, int q) {
  return j * q - j * (j + 1) / 2 + i;
}

VectorXd vech(const MatrixXd& G);
MatrixXd unvech(const VectorXd& v);

/// D_q with D_q vech(G) = vec(G) for symmetric G.
MatrixXd duplication_matrix(int q);

struct SelectorMatrices {
  MatrixXd C;  // q(q+1)/2 x q^2, vech(G) = C vec(G)
  MatrixXd L;  // q x q(q+1)/2, picks diagonal entries of vech
  MatrixXd J;  // k_q x q(q+1)/2, picks strict-lower entries of vech
};

SelectorMatrices selector_matrices(int q);

/// K_{pm} with K_{pm} vec(A) = vec(A^T) for any p x m matrix A.
MatrixXd commutation_matrix(int p, int m);

/// Moore-Penrose inverse; singular values below tol * sigma_max are dropped.
MatrixXd pinv(const MatrixXd& M, double tol = 1e-10);

/// Numerical rank at the same relative threshold pinv uses.
int numerical_rank(const MatrixXd& M, double tol = 1e-10);

/// Orthogonal projection onto span(B). B may be rank deficient; the zero
/// matrix maps to the zero projection.
MatrixXd projection(const MatrixXd& B, double tol = 1e-10);

/// Orthonormal basis of span(B) (columns), rank detected via tol.
MatrixXd orth(const MatrixXd& B, double tol = 1e-10);

/// Bundle of the operator matrices a model with p continuous and q binary
/// coordinates needs. Built once, shared freely across threads.
struct OperatorMatrices {
  int p = 0;
  int q = 0;
  MatrixXd Dq, Cq, Lq, Jq;  // for dimension q
  MatrixXd Dp;              // duplication for dimension p

  static OperatorMatrices make(int p, int q);
};

}  // namespace mixsdr
