#include "flowcrypt/leakage.hpp"

#include <cmath>
#include <limits>

#include "flowcrypt/optim.hpp"

namespace flowcrypt::leakage {

namespace {

Vector sigmoid(const Vector& z) {
  return z.unaryExpr([](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
}

Vector softmax(const Vector& o) {
  const Vector e = (o.array() - o.maxCoeff()).exp();
  return e / e.sum();
}

void check_inputs(const Victim& victim, const Vector& x, const Vector& y) {
  require(static_cast<std::size_t>(x.size()) == input_dim(victim), ErrorKind::kShapeMismatch,
          "input has dimension " + std::to_string(x.size()) + ", victim expects " +
              std::to_string(input_dim(victim)));
  require(static_cast<std::size_t>(y.size()) == label_dim(victim), ErrorKind::kShapeMismatch,
          "label has length " + std::to_string(y.size()) + ", victim expects " +
              std::to_string(label_dim(victim)));
}

}  // namespace

ToyClassifier make_toy_classifier(std::size_t input_dim, std::size_t hidden, std::size_t classes,
                                  Rng& rng, double scale) {
  require(input_dim > 0 && hidden > 0 && classes >= 2, ErrorKind::kInvalidArgument,
          "classifier needs input_dim > 0, hidden > 0 and at least two classes");
  const auto m = static_cast<Eigen::Index>(input_dim);
  const auto h = static_cast<Eigen::Index>(hidden);
  const auto c = static_cast<Eigen::Index>(classes);
  ToyClassifier net;
  net.w1 = standard_normal_matrix(h, m, rng) * (scale / std::sqrt(double(m)));
  net.b1 = standard_normal_matrix(h, 1, rng).col(0) * scale;
  net.w2 = standard_normal_matrix(c, h, rng) * (scale / std::sqrt(double(h)));
  net.b2 = standard_normal_matrix(c, 1, rng).col(0) * scale;
  return net;
}

std::size_t input_dim(const Victim& victim) {
  if (const auto* l = std::get_if<LinearVictim>(&victim)) return static_cast<std::size_t>(l->w.size());
  return std::get<ToyClassifier>(victim).input_dim();
}

std::size_t label_dim(const Victim& victim) {
  if (std::holds_alternative<LinearVictim>(victim)) return 1;
  return std::get<ToyClassifier>(victim).classes();
}

std::size_t num_params(const Victim& victim) {
  if (const auto* l = std::get_if<LinearVictim>(&victim)) return static_cast<std::size_t>(l->w.size()) + 1;
  const auto& n = std::get<ToyClassifier>(victim);
  return static_cast<std::size_t>(n.w1.size() + n.b1.size() + n.w2.size() + n.b2.size());
}

Vector get_params(const Victim& victim) {
  Vector p(static_cast<Eigen::Index>(num_params(victim)));
  if (const auto* l = std::get_if<LinearVictim>(&victim)) {
    p.head(l->w.size()) = l->w;
    p(l->w.size()) = l->b;
    return p;
  }
  const auto& n = std::get<ToyClassifier>(victim);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n.w1.rows(); ++i)
    for (Eigen::Index j = 0; j < n.w1.cols(); ++j) p(k++) = n.w1(i, j);
  for (Eigen::Index i = 0; i < n.b1.size(); ++i) p(k++) = n.b1(i);
  for (Eigen::Index i = 0; i < n.w2.rows(); ++i)
    for (Eigen::Index j = 0; j < n.w2.cols(); ++j) p(k++) = n.w2(i, j);
  for (Eigen::Index i = 0; i < n.b2.size(); ++i) p(k++) = n.b2(i);
  return p;
}

void set_params(Victim& victim, const Vector& p) {
  require(static_cast<std::size_t>(p.size()) == num_params(victim), ErrorKind::kShapeMismatch,
          "parameter vector has the wrong length");
  if (auto* l = std::get_if<LinearVictim>(&victim)) {
    l->w = p.head(l->w.size());
    l->b = p(l->w.size());
    return;
  }
  auto& n = std::get<ToyClassifier>(victim);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n.w1.rows(); ++i)
    for (Eigen::Index j = 0; j < n.w1.cols(); ++j) n.w1(i, j) = p(k++);
  for (Eigen::Index i = 0; i < n.b1.size(); ++i) n.b1(i) = p(k++);
  for (Eigen::Index i = 0; i < n.w2.rows(); ++i)
    for (Eigen::Index j = 0; j < n.w2.cols(); ++j) n.w2(i, j) = p(k++);
  for (Eigen::Index i = 0; i < n.b2.size(); ++i) n.b2(i) = p(k++);
}

Vector predict_proba(const ToyClassifier& model, const Vector& x) {
  return softmax(model.w2 * sigmoid(model.w1 * x + model.b1) + model.b2);
}

double loss(const Victim& victim, const Vector& x, const Vector& y) {
  check_inputs(victim, x, y);
  if (const auto* l = std::get_if<LinearVictim>(&victim)) {
    const double r = l->w.dot(x) + l->b - y(0);
    return 0.5 * r * r;
  }
  const auto& n = std::get<ToyClassifier>(victim);
  const Vector o = n.w2 * sigmoid(n.w1 * x + n.b1) + n.b2;
  const double lse = o.maxCoeff() + std::log((o.array() - o.maxCoeff()).exp().sum());
  return -(y.array() * (o.array() - lse)).sum();
}

Vector compute_gradients(const Victim& victim, const Vector& x, const Vector& y) {
  check_inputs(victim, x, y);
  Vector g(static_cast<Eigen::Index>(num_params(victim)));
  if (const auto* l = std::get_if<LinearVictim>(&victim)) {
    const double r = l->w.dot(x) + l->b - y(0);
    g.head(x.size()) = r * x;
    g(x.size()) = r;
  } else {
    const auto& n = std::get<ToyClassifier>(victim);
    const Vector h = sigmoid(n.w1 * x + n.b1);
    const Vector p = softmax(n.w2 * h + n.b2);
    const Vector go = p * y.sum() - y;
    const Vector gz = (n.w2.transpose() * go).cwiseProduct(h.cwiseProduct((1.0 - h.array()).matrix()));
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n.w1.rows(); ++i)
      for (Eigen::Index j = 0; j < n.w1.cols(); ++j) g(k++) = gz(i) * x(j);
    for (Eigen::Index i = 0; i < gz.size(); ++i) g(k++) = gz(i);
    for (Eigen::Index i = 0; i < n.w2.rows(); ++i)
      for (Eigen::Index j = 0; j < n.w2.cols(); ++j) g(k++) = go(i) * h(j);
    for (Eigen::Index i = 0; i < go.size(); ++i) g(k++) = go(i);
  }
  require(g.allFinite(), ErrorKind::kNumerical, "gradient is not finite");
  return g;
}

Vector one_hot(std::size_t label, std::size_t classes) {
  require(label < classes, ErrorKind::kShapeMismatch,
          "label " + std::to_string(label) + " is out of range for " + std::to_string(classes) + " classes");
  Vector y = Vector::Zero(static_cast<Eigen::Index>(classes));
  y(static_cast<Eigen::Index>(label)) = 1.0;
  return y;
}

Vector compute_gradients(const ToyClassifier& model, const Vector& x, std::size_t label) {
  return compute_gradients(Victim{model}, x, one_hot(label, model.classes()));
}

Vector federated_step(const Vector& params, const std::vector<Vector>& grads, double eta) {
  require(!grads.empty(), ErrorKind::kInvalidArgument, "no agent gradients to average");
  Vector sum = Vector::Zero(params.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    require(grads[i].size() == params.size(), ErrorKind::kShapeMismatch,
            "gradient of agent " + std::to_string(i) + " does not match the parameter shape");
    sum += grads[i];
  }
  return params - eta * sum / double(grads.size());
}

double mse(const Vector& a, const Vector& b) {
  require(a.size() == b.size() && a.size() > 0, ErrorKind::kShapeMismatch, "mse of mismatched vectors");
  return (a - b).squaredNorm() / double(a.size());
}

// ---- attack ------------------------------------------------------------------------

namespace {

// Attack variables: x' followed by the label variables (softmax logits for a
// classifier, the raw regression target for the linear victim) unless the
// label is known.
struct MatchProblem {
  const Victim& victim;
  const Vector& target;
  const DlgConfig& config;
  Eigen::Index m;

  Vector label_of(const Vector& z) const {
    if (config.known_label) return *config.known_label;
    const Vector tail = z.tail(z.size() - m);
    if (std::holds_alternative<LinearVictim>(victim)) return tail;
    return softmax(tail);
  }

  Vector gradient_map(const Vector& z) const {
    return compute_gradients(victim, z.head(m), label_of(z));
  }

  double value(const Vector& z, Vector& grad) const {
    const Vector r = gradient_map(z) - target;
    const double h = config.fd_step;
    Matrix jac(r.size(), z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      Vector zp = z, zm = z;
      zp(j) += h;
      zm(j) -= h;
      jac.col(j) = (gradient_map(zp) - gradient_map(zm)) / (2.0 * h);
    }
    grad = 2.0 * jac.transpose() * r;
    return r.squaredNorm();
  }
};

DlgResult dlg_single(const Victim& victim, const Vector& target, const DlgConfig& config,
                     std::uint64_t seed) {
  const auto m = static_cast<Eigen::Index>(input_dim(victim));
  const auto label_vars = config.known_label ? 0 : static_cast<Eigen::Index>(label_dim(victim));
  MatchProblem problem{victim, target, config, m};

  Rng rng(seed);
  Vector z = standard_normal_matrix(m + label_vars, 1, rng).col(0);

  DlgResult result;
  Vector grad;
  double f = problem.value(z, grad);
  result.initial_loss = f;
  double best = f;
  Vector best_z = z;
  std::vector<double> raw;

  auto record = [&](double value) {
    raw.push_back(value);
    if (!std::isfinite(value) || value > config.divergence_threshold)
      throw DivergenceError("gradient-match loss diverged (" + std::to_string(value) + ") at iteration " +
                                std::to_string(raw.size()),
                            raw);
    if (value < best) {
      best = value;
      best_z = z;
    }
    result.trajectory.push_back(best);
  };

  if (config.optimizer == DlgOptimizer::kAdam) {
    optim::AdamState state;
    const optim::AdamParams params{config.learning_rate, 0.9, 0.999, 1e-8};
    for (std::size_t it = 0; it < config.iterations; ++it) {
      optim::adam_update(z, grad, state, params);
      f = problem.value(z, grad);
      record(f);
      ++result.iterations;
    }
  } else {
    optim::Lbfgs opt({config.learning_rate, 10, 30, 1e-4});
    const optim::Objective objective = [&](const Vector& v, Vector& g) { return problem.value(v, g); };
    for (std::size_t it = 0; it < config.iterations; ++it) {
      const bool moved = opt.step(objective, z, f, grad);
      record(f);
      ++result.iterations;
      if (!moved || f == 0.0) break;
    }
  }

  result.final_loss = best;
  result.x = best_z.head(m);
  result.y = problem.label_of(best_z);
  return result;
}

}  // namespace

DlgResult dlg_attack(const Victim& victim, const Vector& target, const DlgConfig& config) {
  require(config.iterations >= 1, ErrorKind::kInvalidArgument, "iterations must be at least 1");
  require(config.learning_rate > 0.0, ErrorKind::kInvalidArgument, "learning rate must be positive");
  require(config.fd_step > 0.0, ErrorKind::kInvalidArgument, "finite-difference step must be positive");
  require(static_cast<std::size_t>(target.size()) == num_params(victim), ErrorKind::kShapeMismatch,
          "target gradient has length " + std::to_string(target.size()) + ", victim has " +
              std::to_string(num_params(victim)) + " parameters");
  if (config.known_label)
    require(static_cast<std::size_t>(config.known_label->size()) == label_dim(victim), ErrorKind::kShapeMismatch,
            "known label has the wrong length");
  require(config.restarts >= 1, ErrorKind::kInvalidArgument, "restarts must be at least 1");
  if (config.restarts == 1) return dlg_single(victim, target, config, config.seed);
  DlgResult best;
  for (std::size_t r = 0; r < config.restarts; ++r) {
    auto run = dlg_single(victim, target, config, derive_seed(config.seed, r));
    run.restart = r;
    if (r == 0 || run.final_loss < best.final_loss) best = std::move(run);
  }
  return best;
}

nlohmann::json to_json(const AttackReport& r) {
  nlohmann::json j;
  j["schema_version"] = AttackReport::kSchemaVersion;
  j["victim"] = r.victim;
  j["optimizer"] = r.optimizer;
  j["initial_loss"] = r.result.initial_loss;
  j["final_loss"] = r.result.final_loss;
  j["mse_vs_target"] = r.mse_vs_target;
  if (r.mse_vs_original) j["mse_vs_original"] = *r.mse_vs_original;
  j["iterations"] = r.result.iterations;
  j["seed"] = r.seed;
  return j;
}

}  // namespace flowcrypt::leakage
