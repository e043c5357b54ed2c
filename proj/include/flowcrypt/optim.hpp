#pragma once

#include <cstdint>
#include <functional>

#include <Eigen/Dense>

namespace flowcrypt::optim {

using Vector = Eigen::VectorXd;

struct AdamParams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of `params` in place.
void adam_update(Vector& params, const Vector& grad, AdamState& state, const AdamParams& p);

void sgd_update(Vector& params, const Vector& grad, double learning_rate);

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping.
double clip_global_norm(Vector& grad, double max_norm);

/// f(x) with its gradient written into `grad`.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsOptions {
  double learning_rate = 1.0;
  int history = 10;
  int max_line_search = 30;
  double armijo_c1 = 1e-4;
};

/// Limited-memory BFGS with backtracking Armijo line search. Each call to
/// step() performs one outer iteration.
class Lbfgs {
 public:
  explicit Lbfgs(LbfgsOptions options) : opts_(options) {}

  /// Advances x; f and grad are updated to the new iterate. Returns false
  /// when no descent step could be found (converged or stalled).
  bool step(const Objective& objective, Vector& x, double& f, Vector& grad);

 private:
  Vector direction(const Vector& grad) const;

  LbfgsOptions opts_;
  std::vector<Vector> s_hist_;
  std::vector<Vector> y_hist_;
  std::vector<double> rho_hist_;
  bool first_ = true;
};

}  // namespace flowcrypt::optim
