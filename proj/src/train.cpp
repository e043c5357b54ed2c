#include "flowcrypt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <variant>

#include "flowcrypt/error.hpp"

namespace flowcrypt::train {

namespace {

using flow::ActNorm;
using flow::AffineCoupling;
using flow::InvertibleLinear;
using flow::Layer;

// Batched evaluation: one sample per column.

Matrix upper_with_diag(const InvertibleLinear& l) {
  Matrix u = l.upper.triangularView<Eigen::StrictlyUpper>();
  u.diagonal() = l.sign.cwiseProduct(l.log_diag.array().exp().matrix());
  return u;
}

Matrix unit_lower(const InvertibleLinear& l) {
  Matrix lo = l.lower.triangularView<Eigen::StrictlyLower>();
  lo.diagonal().setOnes();
  return lo;
}

Matrix gather_rows(const Matrix& x, const std::vector<Eigen::Index>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

struct CouplingCache {
  Matrix xc, hidden, raw, log_scale, shift;
};

CouplingCache coupling_cache(const AffineCoupling& l, const Matrix& x) {
  CouplingCache c;
  const auto t = static_cast<Eigen::Index>(l.trans_index().size());
  c.xc = gather_rows(x, l.cond_index());
  c.hidden = ((l.w1 * c.xc).colwise() + l.b1).array().tanh().matrix();
  const Matrix out = (l.w2 * c.hidden).colwise() + l.b2;
  c.raw = out.topRows(t);
  c.log_scale = l.s_max * c.raw.array().tanh().matrix();
  c.shift = out.bottomRows(t);
  return c;
}

// Returns y and accumulates the per-sample log-det into `log_det`.
Matrix batch_forward(const Layer& layer, const Matrix& x, Eigen::VectorXd& log_det) {
  if (const auto* l = std::get_if<ActNorm>(&layer)) {
    log_det.array() += l->scale.array().abs().log().sum();
    return (l->scale.asDiagonal() * x).colwise() + l->bias;
  }
  if (const auto* l = std::get_if<InvertibleLinear>(&layer)) {
    log_det.array() += l->log_diag.sum();
    const Matrix w = unit_lower(*l) * (upper_with_diag(*l) * x);
    Matrix y(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.rows(); ++i) y.row(i) = w.row(l->perm[static_cast<std::size_t>(i)]);
    return y;
  }
  const auto& l = std::get<AffineCoupling>(layer);
  const auto c = coupling_cache(l, x);
  const auto trans = l.trans_index();
  Matrix y = x;
  for (std::size_t i = 0; i < trans.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    y.row(trans[i]) = x.row(trans[i]).cwiseProduct(c.log_scale.row(j).array().exp().matrix()) +
                      c.shift.row(j);
  }
  log_det += c.log_scale.colwise().sum().transpose();
  return y;
}

// Gradient of sum_b [ -log_det_b ] plus the upstream term <gy, y>, with respect
// to the layer input and parameters (summed, not averaged, over the batch).
Matrix batch_backward(const Layer& layer, const Matrix& x, const Matrix& gy, Vector& gparams) {
  const auto batch = static_cast<double>(x.cols());
  gparams.resize(static_cast<Eigen::Index>(flow::num_params(layer)));
  if (const auto* l = std::get_if<ActNorm>(&layer)) {
    const auto m = l->scale.size();
    gparams.head(m) = (gy.cwiseProduct(x)).rowwise().sum() -
                      batch * l->scale.cwiseInverse();
    gparams.tail(m) = gy.rowwise().sum();
    return l->scale.asDiagonal() * gy;
  }
  if (const auto* l = std::get_if<InvertibleLinear>(&layer)) {
    const auto n = l->log_diag.size();
    const Matrix ud = upper_with_diag(*l);
    const Matrix lo = unit_lower(*l);
    const Matrix v = ud * x;
    Matrix gw(gy.rows(), gy.cols());
    for (Eigen::Index i = 0; i < n; ++i) gw.row(l->perm[static_cast<std::size_t>(i)]) = gy.row(i);
    const Matrix g_lower = gw * v.transpose();
    const Matrix gv = lo.transpose() * gw;
    const Matrix g_upper = gv * x.transpose();
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < i; ++j) gparams(k++) = g_lower(i, j);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) gparams(k++) = g_upper(i, j);
    for (Eigen::Index i = 0; i < n; ++i) gparams(k++) = g_upper(i, i) * ud(i, i) - batch;
    return ud.transpose() * gv;
  }
  const auto& l = std::get<AffineCoupling>(layer);
  const auto c = coupling_cache(l, x);
  const auto cond = l.cond_index();
  const auto trans = l.trans_index();
  const auto t = static_cast<Eigen::Index>(trans.size());
  const Matrix xt = gather_rows(x, trans);
  const Matrix gyt = gather_rows(gy, trans);
  const Eigen::ArrayXXd scale = c.log_scale.array().exp();

  const Eigen::ArrayXXd g_log_scale = gyt.array() * xt.array() * scale - 1.0;
  const Eigen::ArrayXXd th = c.raw.array().tanh();
  Matrix g_out(2 * t, x.cols());
  g_out.topRows(t) = (g_log_scale * l.s_max * (1.0 - th.square())).matrix();
  g_out.bottomRows(t) = gyt;

  const Matrix g_w2 = g_out * c.hidden.transpose();
  const Vector g_b2 = g_out.rowwise().sum();
  const Matrix g_a = ((l.w2.transpose() * g_out).array() * (1.0 - c.hidden.array().square())).matrix();
  const Matrix g_w1 = g_a * c.xc.transpose();
  const Vector g_b1 = g_a.rowwise().sum();
  const Matrix g_xc = l.w1.transpose() * g_a;

  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < g_w1.rows(); ++i)
    for (Eigen::Index j = 0; j < g_w1.cols(); ++j) gparams(k++) = g_w1(i, j);
  gparams.segment(k, g_b1.size()) = g_b1;
  k += g_b1.size();
  for (Eigen::Index i = 0; i < g_w2.rows(); ++i)
    for (Eigen::Index j = 0; j < g_w2.cols(); ++j) gparams(k++) = g_w2(i, j);
  gparams.segment(k, g_b2.size()) = g_b2;

  Matrix gx = gy;
  for (std::size_t i = 0; i < cond.size(); ++i) gx.row(cond[i]) += g_xc.row(static_cast<Eigen::Index>(i));
  for (std::size_t i = 0; i < trans.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    gx.row(trans[i]) = (gyt.row(j).array() * scale.row(j)).matrix();
  }
  return gx;
}

double gaussian_const(std::size_t dim) {
  return 0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi);
}

void check_batch(const FlowModel& model, const Matrix& batch) {
  require(batch.rows() > 0, ErrorKind::kInvalidArgument, "empty batch");
  require(static_cast<std::size_t>(batch.cols()) == model.dim, ErrorKind::kShapeMismatch,
          "batch dimension does not match model");
}

}  // namespace

void validate(const TrainConfig& c) {
  require(c.learning_rate > 0.0 && std::isfinite(c.learning_rate), ErrorKind::kInvalidArgument,
          "learning_rate must be > 0");
  require(c.batch_size >= 1, ErrorKind::kInvalidArgument, "batch_size must be >= 1");
  require(c.steps >= 1, ErrorKind::kInvalidArgument, "steps must be >= 1");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0,
          ErrorKind::kInvalidArgument, "adam betas must lie in [0, 1)");
  require(c.epsilon > 0.0, ErrorKind::kInvalidArgument, "adam epsilon must be > 0");
  require(c.clip_norm > 0.0, ErrorKind::kInvalidArgument, "clip_norm must be > 0");
  require(c.architecture.hidden >= 1, ErrorKind::kInvalidArgument, "hidden width must be >= 1");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") {
      c.optimizer = OptimizerKind::kAdam;
    } else if (opt == "sgd") {
      c.optimizer = OptimizerKind::kSgd;
    } else {
      fail(ErrorKind::kInvalidArgument, "unknown optimizer '" + opt + "'");
    }
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.architecture.blocks = j.value("blocks", c.architecture.blocks);
    c.architecture.hidden = j.value("hidden", c.architecture.hidden);
    c.architecture.s_max = j.value("s_max", c.architecture.s_max);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"steps", c.steps},
      {"seed", c.seed},
      {"optimizer", c.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"epsilon", c.epsilon},
      {"clip_norm", c.clip_norm},
      {"blocks", c.architecture.blocks},
      {"hidden", c.architecture.hidden},
      {"s_max", c.architecture.s_max},
  };
}

double nll_loss(const FlowModel& model, const Matrix& batch) {
  check_batch(model, batch);
  Matrix x = batch.transpose();
  Eigen::VectorXd log_det = Eigen::VectorXd::Zero(x.cols());
  for (const auto& layer : model.layers) x = batch_forward(layer, x, log_det);
  const Eigen::VectorXd per =
      0.5 * x.colwise().squaredNorm().transpose().array() + gaussian_const(model.dim) - log_det.array();
  const double loss = per.mean();
  require(std::isfinite(loss), ErrorKind::kNumerical, "nll_loss: non-finite result");
  return loss;
}

LossAndGradients loss_and_gradients(const FlowModel& model, const Matrix& batch) {
  check_batch(model, batch);
  const auto n_layers = model.layers.size();
  std::vector<Matrix> inputs(n_layers);
  Matrix x = batch.transpose();
  Eigen::VectorXd log_det = Eigen::VectorXd::Zero(x.cols());
  for (std::size_t i = 0; i < n_layers; ++i) {
    inputs[i] = x;
    x = batch_forward(model.layers[i], x, log_det);
    require(x.allFinite() && log_det.allFinite(), ErrorKind::kNumerical,
            "non-finite activation at layer " + std::to_string(i));
  }
  const double b = static_cast<double>(batch.rows());
  LossAndGradients out;
  out.loss = (0.5 * x.colwise().squaredNorm().transpose().array() + gaussian_const(model.dim) -
              log_det.array())
                 .mean();
  out.grads.resize(n_layers);
  Matrix g = x;  // d/dz of 0.5 |z|^2, per sample
  for (std::size_t i = n_layers; i-- > 0;) {
    g = batch_backward(model.layers[i], inputs[i], g, out.grads[i]);
    out.grads[i] /= b;
    require(g.allFinite() && out.grads[i].allFinite(), ErrorKind::kNumerical,
            "non-finite gradient at layer " + std::to_string(i));
  }
  return out;
}

ParamGradients backward(const FlowModel& model, const Matrix& batch) {
  return loss_and_gradients(model, batch).grads;
}

double global_norm(const ParamGradients& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void optimizer_step(OptimizerState& state, FlowModel& model, const ParamGradients& grads,
                    const TrainConfig& config) {
  require(grads.size() == model.layers.size(), ErrorKind::kShapeMismatch,
          "optimizer_step: gradient/model layer count mismatch");
  if (state.adam.size() != model.layers.size()) state.adam.assign(model.layers.size(), {});
  ++state.step;
  const optim::AdamParams adam{config.learning_rate, config.beta1, config.beta2, config.epsilon};
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Vector p = flow::get_params(model.layers[i]);
    require(p.size() == grads[i].size(), ErrorKind::kShapeMismatch,
            "optimizer_step: gradient shape mismatch at layer " + std::to_string(i));
    if (config.optimizer == OptimizerKind::kAdam) {
      optim::adam_update(p, grads[i], state.adam[i], adam);
    } else {
      optim::sgd_update(p, grads[i], config.learning_rate);
    }
    flow::set_params(model.layers[i], p);
  }
}

TrainResult train_flow(const Matrix& data, const TrainConfig& config) {
  validate(config);
  require(data.rows() > 0 && data.cols() > 0, ErrorKind::kInvalidArgument, "train_flow: empty data");
  return train_flow(flow::build_flow(static_cast<std::size_t>(data.cols()), config.architecture,
                                     derive_seed(config.seed, 1)),
                    data, config);
}

TrainResult train_flow(FlowModel model, const Matrix& data, const TrainConfig& config) {
  validate(config);
  require(data.rows() > 0, ErrorKind::kInvalidArgument, "train_flow: empty data");
  require(static_cast<std::size_t>(data.cols()) == model.dim, ErrorKind::kShapeMismatch,
          "train_flow: data dimension does not match model");
  require(data.allFinite(), ErrorKind::kDegenerateData, "train_flow: non-finite data");
  const Vector mean = data.colwise().mean().transpose();
  for (Eigen::Index d = 0; d < data.cols(); ++d) {
    const double var = (data.col(d).array() - mean(d)).square().mean();
    require(var > 0.0, ErrorKind::kDegenerateData,
            "train_flow: zero variance in dimension " + std::to_string(d));
  }

  const auto n = static_cast<std::size_t>(data.rows());
  const std::size_t batch = std::min(config.batch_size, n);
  Rng shuffle_rng(derive_seed(config.seed, 2));
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::size_t cursor = 0;

  auto next_batch = [&]() {
    if (cursor + batch > n) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
    }
    Matrix b(static_cast<Eigen::Index>(batch), data.cols());
    for (std::size_t i = 0; i < batch; ++i)
      b.row(static_cast<Eigen::Index>(i)) = data.row(order[cursor + i]);
    cursor += batch;
    return b;
  };

  TrainResult result;
  {
    Matrix first(static_cast<Eigen::Index>(batch), data.cols());
    for (std::size_t i = 0; i < batch; ++i) first.row(static_cast<Eigen::Index>(i)) = data.row(order[i]);
    flow::initialize_actnorms(model, first);
  }
  result.initial_nll = nll_loss(model, data);

  OptimizerState state;
  result.curve.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const Matrix b = next_batch();
    auto lg = loss_and_gradients(model, b);
    const double norm = global_norm(lg.grads);
    if (norm > config.clip_norm) {
      for (auto& g : lg.grads) g *= config.clip_norm / norm;
    }
    optimizer_step(state, model, lg.grads, config);
    result.curve.push_back({step, lg.loss, norm});
  }
  result.final_nll = nll_loss(model, data);
  result.model = std::move(model);
  return result;
}

std::string training_log_jsonl(const std::vector<TrainRecord>& curve) {
  std::ostringstream out;
  for (const auto& r : curve) {
    out << nlohmann::json{{"step", r.step}, {"nll", r.nll}, {"grad_norm", r.grad_norm}}.dump()
        << '\n';
  }
  return out.str();
}

}  // namespace flowcrypt::train
