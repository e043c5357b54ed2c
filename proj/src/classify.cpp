#include "flowcrypt/classify.hpp"

#include <cmath>

#include "flowcrypt/error.hpp"

namespace flowcrypt::classify {

namespace {

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double objective(const Matrix& xa, const Vector& y, const Vector& theta, double ridge) {
  const Vector z = xa * theta;
  double f = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) f += softplus(z(i)) - y(i) * z(i);
  const auto d = theta.size() - 1;
  return f / static_cast<double>(z.size()) + 0.5 * ridge * theta.head(d).squaredNorm();
}

}  // namespace

LogisticModel fit_logistic(const Matrix& x, const std::vector<int>& y, const LogisticOptions& options) {
  require(x.rows() > 0, ErrorKind::kInvalidArgument, "no training samples");
  require(static_cast<std::size_t>(x.rows()) == y.size(), ErrorKind::kShapeMismatch,
          "label count does not match sample count");
  require(x.allFinite(), ErrorKind::kNumerical, "non-finite training features");
  const auto n = x.rows();
  const auto d = x.cols();
  Matrix xa(n, d + 1);
  xa.leftCols(d) = x;
  xa.col(d).setOnes();
  Vector yv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(y[static_cast<std::size_t>(i)] == 0 || y[static_cast<std::size_t>(i)] == 1,
            ErrorKind::kInvalidArgument, "logistic targets must be 0 or 1");
    yv(i) = y[static_cast<std::size_t>(i)];
  }
  // A tiny penalty on the bias too keeps separable data from diverging in it.
  Vector penalty = Vector::Constant(d + 1, options.ridge);
  penalty(d) = 1e-10;

  Vector theta = Vector::Zero(d + 1);
  double f = objective(xa, yv, theta, options.ridge);
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    const Vector z = xa * theta;
    Vector p(n), wgt(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      wgt(i) = std::max(p(i) * (1 - p(i)), 1e-12);
    }
    const Vector grad = xa.transpose() * (p - yv) / double(n) + penalty.cwiseProduct(theta);
    Matrix hess = xa.transpose() * wgt.asDiagonal() * xa / double(n);
    hess.diagonal() += penalty;
    const Vector step = hess.ldlt().solve(grad);
    // Damped Newton: halve until the objective decreases.
    double t = 1.0;
    Vector next = theta - step;
    double fn = objective(xa, yv, next, options.ridge);
    while (fn > f && t > 1e-8) {
      t *= 0.5;
      next = theta - t * step;
      fn = objective(xa, yv, next, options.ridge);
    }
    const double change = f - fn;
    theta = next;
    f = fn;
    if (grad.norm() < options.tolerance || (change >= 0 && change < options.tolerance * 1e-2)) break;
  }
  return {theta.head(d), theta(d)};
}

Vector predict_proba(const LogisticModel& model, const Matrix& x) {
  require(x.cols() == model.weights.size(), ErrorKind::kShapeMismatch,
          "feature dimension does not match the model");
  Vector z = (x * model.weights).array() + model.bias;
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i));
  return z;
}

std::vector<int> predict(const LogisticModel& model, const Matrix& x) {
  const Vector p = predict_proba(model, x);
  std::vector<int> out(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p(i) > 0.5;
  return out;
}

double accuracy(const LogisticModel& model, const Matrix& x, const std::vector<int>& y) {
  require(static_cast<std::size_t>(x.rows()) == y.size(), ErrorKind::kShapeMismatch,
          "label count does not match sample count");
  require(!y.empty(), ErrorKind::kInvalidArgument, "no samples to score");
  const auto pred = predict(model, x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

Matrix quadratic_features(const Matrix& x) {
  Matrix out(x.rows(), 2 * x.cols());
  out.leftCols(x.cols()) = x;
  out.rightCols(x.cols()) = x.array().square().matrix();
  return out;
}

}  // namespace flowcrypt::classify
