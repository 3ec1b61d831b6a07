#include "mixsdr/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace mixsdr {

namespace {

MatrixXd with_intercept(const MatrixXd& Z) {
  MatrixXd X(Z.rows(), Z.cols() + 1);
  X.leftCols(Z.cols()) = Z;
  X.col(Z.cols()).setOnes();
  return X;
}

/// Softmax probabilities with the last class as reference.
MatrixXd class_probs(const MatrixXd& X, const MatrixXd& W) {
  const int n = static_cast<int>(X.rows());
  const int K = static_cast<int>(W.cols()) + 1;
  MatrixXd logits(n, K);
  logits.leftCols(K - 1) = X * W;
  logits.col(K - 1).setZero();
  MatrixXd P(n, K);
  for (int i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    P.row(i) = (logits.row(i).array() - mx).exp();
    P.row(i) /= P.row(i).sum();
  }
  return P;
}

double multinomial_loglik(const MatrixXd& P, const std::vector<int>& yidx) {
  double ll = 0.0;
  for (size_t i = 0; i < yidx.size(); ++i)
    ll += std::log(std::max(P(static_cast<int>(i), yidx[i]), 1e-300));
  return ll;
}

}  // namespace

DownstreamModel fit_downstream(const MatrixXd& Z, const VectorXd& y, bool categorical,
                               const DownstreamModel* warm) {
  const int n = static_cast<int>(y.size());
  DownstreamModel model;
  model.classification = categorical;
  const MatrixXd X = with_intercept(Z);
  const int dim = static_cast<int>(X.cols());

  if (!categorical) {
    MatrixXd G = X.transpose() * X;
    G.diagonal().array() += 1e-10 * (1.0 + G.trace() / dim);
    model.coef = G.llt().solve(X.transpose() * y);
    return model;
  }

  std::map<double, int> seen;
  for (int i = 0; i < n; ++i) seen.emplace(y(i), 0);
  if (seen.size() < 2)
    throw std::invalid_argument("fit_downstream: single-class training response");
  int idx = 0;
  for (auto& [label, id] : seen) {
    id = idx++;
    model.classes.push_back(label);
  }
  const int K = static_cast<int>(model.classes.size());
  std::vector<int> yidx(n);
  for (int i = 0; i < n; ++i) yidx[i] = seen[y(i)];

  MatrixXd W = MatrixXd::Zero(dim, K - 1);
  if (warm && warm->classification && warm->W.rows() == dim && warm->W.cols() == K - 1)
    W = warm->W;

  const int nparam = dim * (K - 1);
  MatrixXd P = class_probs(X, W);
  double ll = multinomial_loglik(P, yidx);
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    VectorXd grad = VectorXd::Zero(nparam);
    MatrixXd hess = MatrixXd::Zero(nparam, nparam);
    for (int a = 0; a < K - 1; ++a) {
      VectorXd ra(n);
      for (int i = 0; i < n; ++i) ra(i) = (yidx[i] == a ? 1.0 : 0.0) - P(i, a);
      grad.segment(a * dim, dim) = X.transpose() * ra;
      for (int b = a; b < K - 1; ++b) {
        VectorXd w(n);
        for (int i = 0; i < n; ++i)
          w(i) = P(i, a) * ((a == b ? 1.0 : 0.0) - P(i, b));
        const MatrixXd Hab = X.transpose() * w.asDiagonal() * X;
        hess.block(a * dim, b * dim, dim, dim) = Hab;
        if (b != a) hess.block(b * dim, a * dim, dim, dim) = Hab;
      }
    }
    if (grad.cwiseAbs().maxCoeff() <= 1e-8 * n) {
      converged = true;
      break;
    }
    hess.diagonal().array() += 1e-9 * (1.0 + hess.trace() / nparam);
    const VectorXd dir = hess.ldlt().solve(grad);
    double t = 1.0;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      MatrixXd Wc = W + t * Eigen::Map<const MatrixXd>(dir.data(), dim, K - 1);
      MatrixXd Pc = class_probs(X, Wc);
      const double llc = multinomial_loglik(Pc, yidx);
      if (llc > ll - 1e-12) {
        W = std::move(Wc);
        P = std::move(Pc);
        improved = llc > ll;
        ll = llc;
        break;
      }
      t *= 0.5;
    }
    if (!improved) {
      converged = grad.cwiseAbs().maxCoeff() <= 1e-4 * n;
      break;
    }
  }
  model.W = W;
  model.converged = converged;
  return model;
}

MatrixXd predict_prob(const DownstreamModel& model, const MatrixXd& Z) {
  if (!model.classification)
    throw std::logic_error("predict_prob: regression model has no class probabilities");
  return class_probs(with_intercept(Z), model.W);
}

VectorXd predict(const DownstreamModel& model, const MatrixXd& Z) {
  const int n = static_cast<int>(Z.rows());
  VectorXd out(n);
  if (model.classification) {
    const MatrixXd P = predict_prob(model, Z);
    for (int i = 0; i < n; ++i) {
      int arg = 0;
      P.row(i).maxCoeff(&arg);
      out(i) = model.classes[arg];
    }
  } else {
    out = with_intercept(Z) * model.coef;
  }
  return out;
}

double prediction_error(const DownstreamModel& model, const MatrixXd& Z, const VectorXd& y) {
  const VectorXd pred = predict(model, Z);
  if (model.classification) {
    double wrong = 0.0;
    for (int i = 0; i < y.size(); ++i) wrong += pred(i) != y(i);
    return wrong / y.size();
  }
  return (pred - y).squaredNorm() / y.size();
}

double auc_trapezoid(const VectorXd& scores, const VectorXd& labels) {
  const int n = static_cast<int>(scores.size());
  double lo = labels.minCoeff(), hi = labels.maxCoeff();
  if (lo == hi) throw std::invalid_argument("auc: labels contain a single class");
  for (int i = 0; i < n; ++i)
    if (labels(i) != lo && labels(i) != hi)
      throw std::invalid_argument("auc: labels must be binary");

  // Midrank formulation of the trapezoidal AUC.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores(a) < scores(b); });
  std::vector<double> rank(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && scores(order[j + 1]) == scores(order[i])) ++j;
    const double mid = 0.5 * (i + j) + 1.0;
    for (int k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double rank_sum = 0.0;
  int npos = 0;
  for (int k = 0; k < n; ++k)
    if (labels(k) == hi) {
      rank_sum += rank[k];
      ++npos;
    }
  const int nneg = n - npos;
  return (rank_sum - 0.5 * npos * (npos + 1.0)) / (static_cast<double>(npos) * nneg);
}

}  // namespace mixsdr
