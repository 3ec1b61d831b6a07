#pragma once

#include <vector>

#include "mixsdr/dataset.hpp"

// Downstream predictive models fit on reduced coordinates: multinomial
// logistic regression for categorical responses, least squares for
// continuous ones, plus the rate / AUC metrics the CLI reports.

namespace mixsdr {

struct DownstreamModel {
  bool classification = true;
  std::vector<double> classes;  // sorted labels (classification)
  MatrixXd W;                   // (d+1) x (K-1) logit coefficients
  VectorXd coef;                // d+1 linear coefficients (regression)
  bool converged = true;

  int n_features() const {
    return classification ? static_cast<int>(W.rows()) - 1
                          : static_cast<int>(coef.size()) - 1;
  }
};

/// Fits the downstream model for the response type. Z may have zero columns
/// (intercept-only model). Throws on a single-class categorical response.
DownstreamModel fit_downstream(const MatrixXd& Z, const VectorXd& y, bool categorical,
                               const DownstreamModel* warm = nullptr);

/// Class probabilities (n x K) under a classification model.
MatrixXd predict_prob(const DownstreamModel& model, const MatrixXd& Z);
/// Predicted labels (classification) or values (regression).
VectorXd predict(const DownstreamModel& model, const MatrixXd& Z);
/// Misclassification rate or mean squared error over (Z, y).
double prediction_error(const DownstreamModel& model, const MatrixXd& Z, const VectorXd& y);

/// Trapezoidal AUC with midrank tie handling; labels must take exactly two
/// values, the larger one being the positive class.
double auc_trapezoid(const VectorXd& scores, const VectorXd& labels);

}  // namespace mixsdr
