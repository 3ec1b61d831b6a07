#include "mixsdr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mixsdr {

void Dataset::validate() const {
  if (X.rows() != y.size() && X.cols() > 0)
    throw std::invalid_argument("Dataset: X row count does not match response length");
  if (H.rows() != y.size() && H.cols() > 0)
    throw std::invalid_argument("Dataset: H row count does not match response length");
  for (int i = 0; i < H.rows(); ++i)
    for (int j = 0; j < H.cols(); ++j)
      if (H(i, j) != 0.0 && H(i, j) != 1.0)
        throw std::invalid_argument("Dataset: non-binary entry in H at row " +
                                    std::to_string(i) + ", column " + std::to_string(j));
}

Dataset Dataset::rows(const std::vector<int>& idx) const {
  Dataset out;
  const int m = static_cast<int>(idx.size());
  out.y.resize(m);
  out.X.resize(m, X.cols());
  out.H.resize(m, H.cols());
  for (int k = 0; k < m; ++k) {
    out.y(k) = y(idx[k]);
    if (X.cols() > 0) out.X.row(k) = X.row(idx[k]);
    if (H.cols() > 0) out.H.row(k) = H.row(idx[k]);
  }
  return out;
}

FyBasis FyBasis::categorical(const VectorXd& y) {
  std::map<double, int> counts;
  for (int i = 0; i < y.size(); ++i) ++counts[y(i)];
  if (counts.size() < 2) throw std::invalid_argument("FyBasis: degenerate response (single category)");
  FyBasis fy;
  fy.kind_ = FyKind::categorical;
  fy.r_ = static_cast<int>(counts.size()) - 1;
  fy.labels_.reserve(counts.size());
  fy.counts_.reserve(counts.size());
  for (const auto& [label, c] : counts) {
    fy.labels_.push_back(label);
    fy.counts_.push_back(c);
  }
  // Raw basis: indicators of the first h-1 categories; mean is n_j / n.
  fy.mean_.resize(fy.r_);
  const double n = static_cast<double>(y.size());
  for (int j = 0; j < fy.r_; ++j) fy.mean_(j) = fy.counts_[j] / n;
  return fy;
}

FyBasis FyBasis::polynomial(const VectorXd& y, int degree) {
  if (degree < 1) throw std::invalid_argument("FyBasis: polynomial degree must be >= 1");
  bool distinct = false;
  for (int i = 1; i < y.size() && !distinct; ++i) distinct = y(i) != y(0);
  if (!distinct) throw std::invalid_argument("FyBasis: degenerate response (constant)");
  FyBasis fy;
  fy.kind_ = FyKind::polynomial;
  fy.r_ = degree;
  fy.degree_ = degree;
  fy.mean_ = VectorXd::Zero(degree);
  for (int i = 0; i < y.size(); ++i) {
    double v = 1.0;
    for (int k = 0; k < degree; ++k) {
      v *= y(i);
      fy.mean_(k) += v;
    }
  }
  fy.mean_ /= static_cast<double>(y.size());
  return fy;
}

FyBasis FyBasis::custom(const MatrixXd& raw_values) {
  if (raw_values.rows() < 2 || raw_values.cols() < 1)
    throw std::invalid_argument("FyBasis: custom basis needs >= 2 rows and >= 1 column");
  FyBasis fy;
  fy.kind_ = FyKind::custom;
  fy.r_ = static_cast<int>(raw_values.cols());
  fy.mean_ = raw_values.colwise().mean();
  fy.custom_centered_ = raw_values.rowwise() - fy.mean_.transpose();
  return fy;
}

VectorXd FyBasis::centered(double y) const {
  VectorXd f(r_);
  switch (kind_) {
    case FyKind::categorical: {
      for (int j = 0; j < r_; ++j) f(j) = (y == labels_[j] ? 1.0 : 0.0) - mean_(j);
      return f;
    }
    case FyKind::polynomial: {
      double v = 1.0;
      for (int k = 0; k < r_; ++k) {
        v *= y;
        f(k) = v - mean_(k);
      }
      return f;
    }
    case FyKind::custom:
      throw std::logic_error("FyBasis: custom basis has no per-value map");
  }
  return f;
}

MatrixXd FyBasis::centered_matrix(const VectorXd& y) const {
  if (kind_ == FyKind::custom) {
    if (y.size() != custom_centered_.rows())
      throw std::invalid_argument("FyBasis: custom basis only maps the training rows");
    return custom_centered_;
  }
  MatrixXd F(y.size(), r_);
  for (int i = 0; i < y.size(); ++i) F.row(i) = centered(y(i)).transpose();
  return F;
}

std::vector<std::pair<VectorXd, int>> FyBasis::category_values() const {
  if (kind_ != FyKind::categorical)
    throw std::logic_error("FyBasis: category_values requires a categorical basis");
  std::vector<std::pair<VectorXd, int>> out;
  out.reserve(labels_.size());
  for (size_t k = 0; k < labels_.size(); ++k)
    out.emplace_back(centered(labels_[k]), counts_[k]);
  return out;
}

}  // namespace mixsdr
