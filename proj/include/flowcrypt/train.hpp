#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowcrypt/flow.hpp"
#include "flowcrypt/optim.hpp"

namespace flowcrypt::train {

using flow::FlowModel;
using flow::Matrix;
using flow::Vector;

enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global-norm gradient clipping threshold.
  double clip_norm = 50.0;
  flow::FlowArchitecture architecture;
};

void validate(const TrainConfig& config);

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);

/// One gradient array per layer, laid out like flow::get_params(layer).
using ParamGradients = std::vector<Vector>;

struct OptimizerState {
  std::vector<optim::AdamState> adam;  // one per layer
  std::uint64_t step = 0;
};

/// Mean negative log-likelihood (nats) over the rows of `batch`.
double nll_loss(const FlowModel& model, const Matrix& batch);

struct LossAndGradients {
  double loss = 0.0;
  ParamGradients grads;
};

/// Exact reverse-mode gradient of nll_loss with respect to every parameter.
LossAndGradients loss_and_gradients(const FlowModel& model, const Matrix& batch);
ParamGradients backward(const FlowModel& model, const Matrix& batch);

double global_norm(const ParamGradients& grads);

/// Adam (bias corrected) or plain SGD; no clipping is applied here.
void optimizer_step(OptimizerState& state, FlowModel& model, const ParamGradients& grads,
                    const TrainConfig& config);

struct TrainRecord {
  std::size_t step = 0;
  double nll = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  FlowModel model;
  /// Full-data NLL right after ActNorm initialization, before any update.
  double initial_nll = 0.0;
  double final_nll = 0.0;
  std::vector<TrainRecord> curve;
};

/// Maximum-likelihood training on rows of `data`. ActNorm layers are
/// initialized from the first shuffled batch. Data with a zero-variance
/// dimension is rejected (kDegenerateData) before any training happens.
TrainResult train_flow(const Matrix& data, const TrainConfig& config);

/// Same, starting from a caller-provided model (e.g. a custom architecture).
TrainResult train_flow(FlowModel model, const Matrix& data, const TrainConfig& config);

/// JSON lines, one {step, nll, grad_norm} record per step.
std::string training_log_jsonl(const std::vector<TrainRecord>& curve);

}  // namespace flowcrypt::train
