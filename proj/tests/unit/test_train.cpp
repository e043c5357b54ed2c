#include <cmath>

#include "doctest.h"
#include "flowcrypt/dataset.hpp"
#include "flowcrypt/error.hpp"
#include "flowcrypt/optim.hpp"
#include "flowcrypt/train.hpp"

using namespace flowcrypt;
using namespace flowcrypt::train;

namespace {

FlowModel perturbed_flow(std::size_t dim, std::uint64_t seed) {
  FlowModel model = flow::build_flow(dim, {2, 8, 2.0}, seed);
  Rng rng(seed + 17);
  for (auto& layer : model.layers) {
    Vector p = flow::get_params(layer);
    if (auto* an = std::get_if<flow::ActNorm>(&layer)) {
      for (Eigen::Index i = 0; i < an->scale.size(); ++i) p(i) = 0.6 + 0.5 * std::abs(standard_normal(rng));
      for (Eigen::Index i = an->scale.size(); i < p.size(); ++i) p(i) = 0.3 * standard_normal(rng);
      an->initialized = true;
    } else {
      for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += 0.4 * standard_normal(rng);
    }
    flow::set_params(layer, p);
  }
  return model;
}

}  // namespace

TEST_CASE("nll_loss agrees with per-sample log_prob") {
  const auto model = perturbed_flow(3, 1);
  Rng rng(2);
  const Matrix batch = standard_normal_matrix(40, 3, rng);
  double expected = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) expected -= flow::log_prob(model, batch.row(i).transpose());
  expected /= batch.rows();
  CHECK(nll_loss(model, batch) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(loss_and_gradients(model, batch).loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("exact gradients match central differences") {
  for (std::size_t dim : {2u, 3u, 5u}) {
    auto model = perturbed_flow(dim, 10 + dim);
    Rng rng(dim);
    const Matrix batch = standard_normal_matrix(16, static_cast<Eigen::Index>(dim), rng) * 1.5;
    const auto lg = loss_and_gradients(model, batch);
    const double gnorm = global_norm(lg.grads);
    REQUIRE(gnorm > 0.0);
    double worst = 0.0;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
      const Vector p0 = flow::get_params(model.layers[li]);
      for (Eigen::Index k = 0; k < p0.size(); ++k) {
        const double h = 1e-5;
        Vector p = p0;
        p(k) = p0(k) + h;
        flow::set_params(model.layers[li], p);
        const double up = nll_loss(model, batch);
        p(k) = p0(k) - h;
        flow::set_params(model.layers[li], p);
        const double down = nll_loss(model, batch);
        flow::set_params(model.layers[li], p0);
        const double numeric = (up - down) / (2 * h);
        const double analytic = lg.grads[li](k);
        const double rel = std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, rel);
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("adam: first step moves every coordinate by lr against the gradient sign") {
  optim::AdamState state;
  Vector p = Vector::Zero(3);
  Vector g(3);
  g << 2.0, -0.5, 1e-3;
  optim::adam_update(p, g, state, {0.01, 0.9, 0.999, 1e-12});
  CHECK(p(0) == doctest::Approx(-0.01).epsilon(1e-8));
  CHECK(p(1) == doctest::Approx(0.01).epsilon(1e-8));
  CHECK(p(2) == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(state.step == 1);
}

TEST_CASE("clip_global_norm") {
  Vector g(2);
  g << 3.0, 4.0;
  CHECK(optim::clip_global_norm(g, 10.0) == doctest::Approx(5.0));
  CHECK(g(0) == 3.0);
  CHECK(optim::clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.norm() == doctest::Approx(1.0));
}

TEST_CASE("lbfgs minimizes a quadratic and the Rosenbrock function") {
  Eigen::MatrixXd q(3, 3);
  q << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  Vector b(3);
  b << 1, -2, 0.5;
  optim::Objective quad = [&](const Vector& x, Vector& g) {
    g = q * x - b;
    return 0.5 * x.dot(q * x) - b.dot(x);
  };
  optim::Lbfgs opt({});
  Vector x = Vector::Zero(3);
  Vector g;
  double f = quad(x, g);
  for (int i = 0; i < 50 && opt.step(quad, x, f, g); ++i) {}
  CHECK((x - q.ldlt().solve(b)).norm() < 1e-6);

  optim::Objective rosen = [](const Vector& v, Vector& grad) {
    const double a = v(0), c = v(1);
    grad.resize(2);
    grad(0) = -2 * (1 - a) - 400 * a * (c - a * a);
    grad(1) = 200 * (c - a * a);
    return (1 - a) * (1 - a) + 100 * (c - a * a) * (c - a * a);
  };
  optim::Lbfgs opt2({});
  Vector y(2);
  y << -1.2, 1.0;
  f = rosen(y, g);
  for (int i = 0; i < 500 && opt2.step(rosen, y, f, g); ++i) {}
  CHECK(std::abs(y(0) - 1.0) < 1e-4);
  CHECK(std::abs(y(1) - 1.0) < 1e-4);
}

TEST_CASE("training lowers NLL on a 2-D mixture and is deterministic") {
  Rng rng(5);
  const auto data = data::gaussian_mixture_2d(800, rng);
  TrainConfig config;
  config.steps = 300;
  config.batch_size = 128;
  config.learning_rate = 5e-3;
  config.seed = 3;
  config.architecture = {4, 32, 2.0};
  const auto a = train_flow(data.samples, config);
  CHECK(a.final_nll < a.initial_nll - 0.3);
  CHECK(a.curve.size() == config.steps);
  for (const auto& r : a.curve) CHECK(std::isfinite(r.nll));

  const auto b = train_flow(data.samples, config);
  CHECK(flow::get_params(a.model) == flow::get_params(b.model));
  CHECK(a.final_nll == b.final_nll);
  CHECK(training_log_jsonl(a.curve) == training_log_jsonl(b.curve));

  config.seed = 4;
  const auto c = train_flow(data.samples, config);
  CHECK(flow::get_params(a.model) != flow::get_params(c.model));
}

TEST_CASE("sgd training also makes progress") {
  Rng rng(6);
  Matrix data = standard_normal_matrix(500, 2, rng);
  data.col(0) = data.col(0) * 3.0;
  data.col(1) = data.col(1) + 0.8 * data.col(0);
  TrainConfig config;
  config.optimizer = OptimizerKind::kSgd;
  config.learning_rate = 0.01;
  config.steps = 200;
  config.architecture = {2, 8, 2.0};
  const auto r = train_flow(data, config);
  CHECK(r.final_nll < r.initial_nll);
}

TEST_CASE("train_flow rejects degenerate data before training") {
  Matrix data(100, 2);
  Rng rng(1);
  data.col(0) = standard_normal_matrix(100, 1, rng);
  data.col(1).setConstant(3.0);
  TrainConfig config;
  config.steps = 5;
  try {
    train_flow(data, config);
    FAIL("expected degenerate-data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateData);
    CHECK(std::string(e.what()).find("dimension 1") != std::string::npos);
  }
}

TEST_CASE("config validation and JSON round trip") {
  TrainConfig config;
  config.learning_rate = 0.02;
  config.batch_size = 64;
  config.steps = 77;
  config.seed = 9;
  config.optimizer = OptimizerKind::kSgd;
  config.architecture.blocks = 3;
  const auto back = train_config_from_json(to_json(config));
  CHECK(to_json(back) == to_json(config));

  TrainConfig bad;
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(validate(bad), Error);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), Error);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"optimizer", "rmsprop"}}), Error);
}
