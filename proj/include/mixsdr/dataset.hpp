#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mixsdr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// A regression sample: response y, continuous block X (n x p) and binary
/// block H (n x q). H entries must be exactly 0 or 1.
struct Dataset {
  VectorXd y;
  MatrixXd X;  // n x p (p may be 0)
  MatrixXd H;  // n x q (q may be 0)

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(X.cols()); }
  int q() const { return static_cast<int>(H.cols()); }

  /// Throws std::invalid_argument on shape mismatch or non-binary H entry.
  void validate() const;

  Dataset rows(const std::vector<int>& idx) const;
};

enum class FyKind { categorical, polynomial, custom };

/// The known response basis f_Y, stored centered: values() returns raw minus
/// the training-sample mean, so training columns average to zero.
class FyBasis {
 public:
  static FyBasis categorical(const VectorXd& y);
  static FyBasis polynomial(const VectorXd& y, int degree);
  /// Caller supplies raw basis values aligned with the training rows.
  static FyBasis custom(const MatrixXd& raw_values);

  FyKind kind() const { return kind_; }
  int r() const { return r_; }
  const VectorXd& mean() const { return mean_; }
  const std::vector<double>& labels() const { return labels_; }

  /// Centered basis value for a single response (categorical / polynomial).
  VectorXd centered(double y) const;
  /// n x r matrix of centered values for a response vector.
  MatrixXd centered_matrix(const VectorXd& y) const;
  /// Distinct centered values with their sample counts (categorical only).
  std::vector<std::pair<VectorXd, int>> category_values() const;

 private:
  FyKind kind_ = FyKind::categorical;
  int r_ = 0;
  int degree_ = 0;
  std::vector<double> labels_;  // sorted category labels
  std::vector<int> counts_;     // per-category training counts
  VectorXd mean_;               // empirical mean of the raw basis
  MatrixXd custom_centered_;    // custom kind: centered training values
};

}  // namespace mixsdr
