#include "flowcrypt/optim.hpp"

#include <cmath>

#include "flowcrypt/error.hpp"

namespace flowcrypt::optim {

void adam_update(Vector& params, const Vector& grad, AdamState& state, const AdamParams& p) {
  require(params.size() == grad.size(), ErrorKind::kShapeMismatch,
          "adam_update: gradient shape mismatch");
  if (state.m.size() != params.size()) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  ++state.step;
  state.m = p.beta1 * state.m + (1.0 - p.beta1) * grad;
  state.v = p.beta2 * state.v + (1.0 - p.beta2) * grad.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(p.beta1, t);
  const double c2 = 1.0 - std::pow(p.beta2, t);
  params.array() -= p.learning_rate * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + p.epsilon);
}

void sgd_update(Vector& params, const Vector& grad, double learning_rate) {
  require(params.size() == grad.size(), ErrorKind::kShapeMismatch,
          "sgd_update: gradient shape mismatch");
  params -= learning_rate * grad;
}

double clip_global_norm(Vector& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
  return norm;
}

Vector Lbfgs::direction(const Vector& grad) const {
  // Two-loop recursion.
  Vector q = -grad;
  const auto k = s_hist_.size();
  std::vector<double> alpha(k);
  for (std::size_t i = k; i-- > 0;) {
    alpha[i] = rho_hist_[i] * s_hist_[i].dot(q);
    q -= alpha[i] * y_hist_[i];
  }
  if (k > 0) q *= s_hist_.back().dot(y_hist_.back()) / y_hist_.back().squaredNorm();
  for (std::size_t i = 0; i < k; ++i) {
    const double beta = rho_hist_[i] * y_hist_[i].dot(q);
    q += (alpha[i] - beta) * s_hist_[i];
  }
  return q;
}

bool Lbfgs::step(const Objective& objective, Vector& x, double& f, Vector& grad) {
  Vector d = direction(grad);
  double slope = grad.dot(d);
  if (!(slope < 0.0)) {
    // Lost descent; restart from steepest descent.
    s_hist_.clear();
    y_hist_.clear();
    rho_hist_.clear();
    d = -grad;
    slope = -grad.squaredNorm();
    if (!(slope < 0.0)) return false;
  }
  double t = opts_.learning_rate;
  if (first_) {
    // First step has no curvature estimate; keep it bounded.
    t = std::min(1.0, 1.0 / grad.cwiseAbs().sum()) * opts_.learning_rate;
    first_ = false;
  }
  Vector x_new(x.size());
  Vector g_new(x.size());
  double f_new = f;
  bool accepted = false;
  for (int ls = 0; ls < opts_.max_line_search; ++ls) {
    x_new = x + t * d;
    f_new = objective(x_new, g_new);
    if (std::isfinite(f_new) && f_new <= f + opts_.armijo_c1 * t * slope) {
      accepted = true;
      break;
    }
    t *= 0.5;
  }
  if (!accepted) return false;
  Vector s = x_new - x;
  Vector y = g_new - grad;
  const double sy = s.dot(y);
  if (sy > 1e-12 * y.squaredNorm() && sy > 0.0) {
    if (static_cast<int>(s_hist_.size()) == opts_.history) {
      s_hist_.erase(s_hist_.begin());
      y_hist_.erase(y_hist_.begin());
      rho_hist_.erase(rho_hist_.begin());
    }
    s_hist_.push_back(std::move(s));
    y_hist_.push_back(std::move(y));
    rho_hist_.push_back(1.0 / sy);
  }
  x = std::move(x_new);
  grad = std::move(g_new);
  f = f_new;
  return true;
}

}  // namespace flowcrypt::optim
