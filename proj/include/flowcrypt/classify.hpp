#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace flowcrypt::classify {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Binary logistic regression p(y=1|x) = sigmoid(w.x + b).
struct LogisticModel {
  Vector weights;
  double bias = 0.0;
};

struct LogisticOptions {
  double ridge = 1e-4;  // L2 penalty on weights (not on the bias), per sample
  std::size_t max_iterations = 50;
  double tolerance = 1e-10;
};

/// Newton / IRLS fit on rows of `x` with 0/1 targets.
LogisticModel fit_logistic(const Matrix& x, const std::vector<int>& y,
                           const LogisticOptions& options = {});

Vector predict_proba(const LogisticModel& model, const Matrix& x);
std::vector<int> predict(const LogisticModel& model, const Matrix& x);
double accuracy(const LogisticModel& model, const Matrix& x, const std::vector<int>& y);

/// [x, x^2] per row; lets a linear separator pick up variance differences.
Matrix quadratic_features(const Matrix& x);

}  // namespace flowcrypt::classify
