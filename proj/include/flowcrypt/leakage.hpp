#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "flowcrypt/error.hpp"
#include "flowcrypt/rng.hpp"

namespace flowcrypt::leakage {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// x -> sigmoid(W1 x + b1) -> W2 h + b2 -> softmax, cross-entropy against a
/// (possibly soft) label distribution.
struct ToyClassifier {
  Matrix w1;  // hidden x m
  Vector b1;
  Matrix w2;  // classes x hidden
  Vector b2;
  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t classes() const { return static_cast<std::size_t>(w2.rows()); }
};

/// Weights ~ N(0, scale^2 / fan_in), biases ~ N(0, scale^2).
ToyClassifier make_toy_classifier(std::size_t input_dim, std::size_t hidden, std::size_t classes,
                                  Rng& rng, double scale = 1.0);

/// l = 0.5 (w.x + b - y)^2.
struct LinearVictim {
  Vector w;
  double b = 0.0;
};

using Victim = std::variant<LinearVictim, ToyClassifier>;

std::size_t num_params(const Victim& victim);
std::size_t input_dim(const Victim& victim);
/// Length of the label vector the victim's loss takes (1 for regression).
std::size_t label_dim(const Victim& victim);

/// Flat order: w1 row-major, b1, w2 row-major, b2 (linear: w, b).
Vector get_params(const Victim& victim);
void set_params(Victim& victim, const Vector& params);

Vector predict_proba(const ToyClassifier& model, const Vector& x);
double loss(const Victim& victim, const Vector& x, const Vector& y);

/// Exact gradient of the loss with respect to the parameters (flat order
/// above). Non-finite results raise kNumerical.
Vector compute_gradients(const Victim& victim, const Vector& x, const Vector& y);
/// Class label -> one-hot target.
Vector one_hot(std::size_t label, std::size_t classes);
Vector compute_gradients(const ToyClassifier& model, const Vector& x, std::size_t label);

/// W - eta * mean(grads).
Vector federated_step(const Vector& params, const std::vector<Vector>& grads, double eta);

enum class DlgOptimizer { kAdam, kLbfgs };

struct DlgConfig {
  DlgOptimizer optimizer = DlgOptimizer::kAdam;
  double learning_rate = 0.1;
  std::size_t iterations = 300;
  std::uint64_t seed = 0;
  /// When set the label is not optimized.
  std::optional<Vector> known_label;
  /// Central-difference step for the Jacobian of the gradient map.
  double fd_step = 1e-5;
  double divergence_threshold = 1e12;
  /// Independent random starts (seeds derived from `seed`); the run with the
  /// lowest match loss is returned.
  std::size_t restarts = 1;
};

struct DlgResult {
  Vector x;
  /// Continuous label: softmax of the optimized logits for classifiers, the
  /// raw target for regression, or the known label.
  Vector y;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  /// Best-so-far match loss after each iteration (non-increasing).
  std::vector<double> trajectory;
  std::size_t iterations = 0;
  /// Which restart produced this result.
  std::size_t restart = 0;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<double> trajectory)
      : Error(ErrorKind::kNumerical, what), trajectory_(std::move(trajectory)) {}
  const std::vector<double>& trajectory() const { return trajectory_; }

 private:
  std::vector<double> trajectory_;
};

/// Minimizes ||grad(x', y') - target||^2 from a random start. The gradient of
/// the match loss is J^T r with J the central-difference Jacobian of the
/// parameter gradient with respect to (x', y').
DlgResult dlg_attack(const Victim& victim, const Vector& target, const DlgConfig& config);

double mse(const Vector& a, const Vector& b);

struct AttackReport {
  static constexpr int kSchemaVersion = 1;
  DlgResult result;
  double mse_vs_target = 0.0;
  std::optional<double> mse_vs_original;
  std::uint64_t seed = 0;
  std::string optimizer;
  std::string victim;
};

nlohmann::json to_json(const AttackReport& report);

}  // namespace flowcrypt::leakage
