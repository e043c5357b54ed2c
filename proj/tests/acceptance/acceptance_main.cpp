// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "flowcrypt/classify.hpp"
#include "flowcrypt/crypt.hpp"
#include "flowcrypt/dataset.hpp"
#include "flowcrypt/flow.hpp"
#include "flowcrypt/leakage.hpp"
#include "flowcrypt/linalg.hpp"
#include "flowcrypt/security.hpp"
#include "flowcrypt/train.hpp"
#include "support.hpp"

using namespace flowcrypt;
using flow::FlowModel;
using flow::Matrix;
using flow::Vector;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Random but well-conditioned parameters; ActNorms marked initialized.
FlowModel perturbed_flow(std::size_t dim, std::size_t blocks, std::size_t hidden, std::uint64_t seed,
                         double noise = 0.4) {
  FlowModel model = flow::build_flow(dim, {blocks, hidden, 2.0}, seed);
  Rng rng(derive_seed(seed, 77));
  for (auto& layer : model.layers) {
    Vector p = flow::get_params(layer);
    if (auto* an = std::get_if<flow::ActNorm>(&layer)) {
      const auto m = an->scale.size();
      for (Eigen::Index i = 0; i < m; ++i) p(i) = 0.6 + 0.5 * std::abs(standard_normal(rng));
      for (Eigen::Index i = m; i < p.size(); ++i) p(i) = 0.3 * standard_normal(rng);
      an->initialized = true;
    } else {
      // Scaled by fan-in so stacked layers keep features O(1) and conditioning mild.
      const double fan_in = std::holds_alternative<flow::InvertibleLinear>(layer)
                                ? static_cast<double>(dim)
                                : static_cast<double>(hidden);
      for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += noise / std::sqrt(fan_in) * standard_normal(rng);
    }
    flow::set_params(layer, p);
  }
  return model;
}

Matrix training_data(std::size_t dim, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  if (dim == 2) return data::gaussian_mixture_2d(n, rng).samples;
  return data::two_class_gaussian(n, dim, 2.0, rng).samples;
}

FlowModel briefly_trained(std::size_t dim, std::uint64_t seed) {
  train::TrainConfig c;
  c.steps = 100;
  c.seed = seed;
  c.learning_rate = 5e-3;
  c.batch_size = 128;
  c.architecture = {3, 16, 2.0};
  return train::train_flow(training_data(dim, 1000, seed), c).model;
}

// ---- 1 -------------------------------------------------------------------------

Outcome invertibility() {
  double worst = 0.0;
  int flows = 0;
  for (std::size_t dim : {2u, 4u, 8u, 16u}) {
    for (int k = 0; k < 25; ++k, ++flows) {
      const std::uint64_t seed = 1000 * dim + k;
      const FlowModel model = k < 5 ? briefly_trained(dim, seed) : perturbed_flow(dim, 1 + k % 6, 16, seed);
      Rng rng(derive_seed(seed, 1));
      const Matrix x = 1.5 * standard_normal_matrix(100, static_cast<Eigen::Index>(dim), rng);
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Vector s = x.row(i).transpose();
        const Vector back = flow::flow_inverse(model, flow::flow_forward(model, s).values);
        worst = std::max(worst, (back - s).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst < 1e-6, fmt("%d flows, max |f^-1(f(x)) - x|_inf = %.3g (< 1e-6)", flows, worst)};
}

// ---- 2 -------------------------------------------------------------------------

double logdet_rel_error(const std::function<flow::LayerOutput(const Vector&)>& fwd, const Vector& x) {
  const double analytic = fwd(x).log_det;
  const Matrix jac = testing::numeric_jacobian([&](const Vector& v) { return fwd(v).y; }, x, 1e-5);
  const double numeric = testing::log_abs_det(jac);
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

Outcome logdet() {
  double worst = 0.0;
  int cases = 0;
  for (std::size_t dim : {2u, 4u, 8u}) {
    for (int rep = 0; rep < 5; ++rep) {
      const std::uint64_t seed = 10 * dim + rep;
      const FlowModel stack = perturbed_flow(dim, 3, 16, seed);
      Rng rng(seed);
      for (const auto& layer : stack.layers) {
        const Vector x = 1.5 * standard_normal_matrix(static_cast<Eigen::Index>(dim), 1, rng).col(0);
        worst = std::max(worst, logdet_rel_error([&](const Vector& v) { return flow::layer_forward(layer, v); }, x));
        ++cases;
      }
      const Vector x = 1.5 * standard_normal_matrix(static_cast<Eigen::Index>(dim), 1, rng).col(0);
      worst = std::max(worst, logdet_rel_error(
                                  [&](const Vector& v) {
                                    const auto z = flow::flow_forward(stack, v);
                                    return flow::LayerOutput{z.values, z.log_det};
                                  },
                                  x));
      ++cases;
    }
  }
  return {worst < 1e-4, fmt("%d layer/stack cases at m in {2,4,8}, max rel err = %.3g (< 1e-4)", cases, worst)};
}

// ---- 3 -------------------------------------------------------------------------

double rel(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}); }

Outcome gradients() {
  FlowModel model = perturbed_flow(4, 3, 8, 31);
  Rng rng(32);
  const Matrix batch = 1.5 * standard_normal_matrix(16, 4, rng);
  const auto lg = train::loss_and_gradients(model, batch);
  double worst_flow = 0.0;
  std::size_t count = 0;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const Vector p0 = flow::get_params(model.layers[li]);
    for (Eigen::Index k = 0; k < p0.size(); ++k, ++count) {
      const double h = 1e-5;
      Vector p = p0;
      p(k) = p0(k) + h;
      flow::set_params(model.layers[li], p);
      const double up = train::nll_loss(model, batch);
      p(k) = p0(k) - h;
      flow::set_params(model.layers[li], p);
      const double down = train::nll_loss(model, batch);
      flow::set_params(model.layers[li], p0);
      worst_flow = std::max(worst_flow, rel(lg.grads[li](k), (up - down) / (2 * h)));
    }
  }

  leakage::Victim net = leakage::make_toy_classifier(16, 8, 4, rng);
  const Vector x = standard_normal_matrix(16, 1, rng).col(0);
  const Vector y = leakage::one_hot(2, 4);
  const Vector g = leakage::compute_gradients(net, x, y);
  const Vector p0 = leakage::get_params(net);
  double worst_net = 0.0;
  for (Eigen::Index k = 0; k < p0.size(); ++k) {
    const double h = 1e-5;
    Vector p = p0;
    p(k) = p0(k) + h;
    leakage::set_params(net, p);
    const double up = leakage::loss(net, x, y);
    p(k) = p0(k) - h;
    leakage::set_params(net, p);
    const double down = leakage::loss(net, x, y);
    worst_net = std::max(worst_net, rel(g(k), (up - down) / (2 * h)));
  }
  leakage::set_params(net, p0);
  const double worst = std::max(worst_flow, worst_net);
  return {worst < 1e-4, fmt("flow %zu params max rel %.3g; classifier %td params max rel %.3g (< 1e-4)", count,
                            worst_flow, p0.size(), worst_net)};
}

// ---- 4 -------------------------------------------------------------------------

Outcome haar() {
  const int samples = 10000;
  double worst_orth = 0.0;
  bool means_ok = true;
  std::string detail;
  for (std::size_t dim : {2u, 3u, 8u}) {
    Rng rng(500 + dim);
    std::vector<double> d2(samples);
    for (int i = 0; i < samples; ++i) {
      const Matrix a = linalg::sample_haar_matrix(dim, rng);
      worst_orth = std::max(worst_orth, linalg::orthogonality_error(a));
      d2[i] = (a - Matrix::Identity(dim, dim)).squaredNorm();
    }
    double mean = 0.0, var = 0.0;
    for (double v : d2) mean += v;
    mean /= samples;
    for (double v : d2) var += (v - mean) * (v - mean);
    const double se = std::sqrt(var / (samples - 1) / samples);
    const double z = (mean - 2.0 * dim) / se;
    means_ok = means_ok && std::abs(z) <= 3.0;
    detail += fmt("m=%zu mean %.4f (2m=%zu, z=%.2f); ", dim, mean, 2 * dim, z);
  }
  Rng rng(9);
  int positive = 0;
  for (int i = 0; i < samples; ++i) positive += linalg::sample_haar_matrix(1, rng)(0, 0) > 0;
  const double freq = static_cast<double>(positive) / samples;
  const bool ok = worst_orth < 1e-10 && means_ok && std::abs(freq - 0.5) <= 0.02;
  return {ok, detail + fmt("m=1 P(+1)=%.4f; max ||AA^T-I||_F=%.3g", freq, worst_orth)};
}

// ---- 5 -------------------------------------------------------------------------

Outcome round_trip() {
  std::vector<crypt::EncryptionContext> contexts;
  contexts.push_back(crypt::make_context(briefly_trained(2, 3), linalg::sample_haar_orthogonal(2, 4)));
  contexts.push_back(crypt::make_context(perturbed_flow(4, 3, 16, 5), linalg::sample_haar_orthogonal(4, 6)));
  contexts.push_back(crypt::make_context(briefly_trained(8, 7), linalg::sample_haar_orthogonal(8, 8)));
  contexts.push_back(crypt::make_context(perturbed_flow(16, 2, 16, 9), linalg::sample_haar_orthogonal(16, 10)));
  double worst_rt = 0.0, worst_comp = 0.0;
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    const auto& ctx = contexts[c];
    const std::size_t m = ctx.flow.dim;
    Rng rng(derive_seed(11, c));
    const Matrix s = 1.5 * standard_normal_matrix(1000, static_cast<Eigen::Index>(m), rng);
    const Matrix e = crypt::encrypt_rows(ctx, s);
    worst_rt = std::max(worst_rt, (crypt::decrypt_rows(ctx, e) - s).cwiseAbs().maxCoeff());

    // Enc_B(Enc_A(s)) = Enc_{BA}(s) under one flow.
    const auto b = linalg::sample_haar_orthogonal(m, 100 + c);
    const auto ctx_b = crypt::make_context(ctx.flow, b);
    const auto ctx_ba = crypt::make_context(ctx.flow, linalg::make_key(b.matrix * ctx.key.matrix));
    worst_comp = std::max(worst_comp, (crypt::encrypt_rows(ctx_b, e) - crypt::encrypt_rows(ctx_ba, s)).cwiseAbs().maxCoeff());
  }
  return {worst_rt < 1e-5 && worst_comp < 2e-5,
          fmt("4 contexts x 1000 samples: round trip %.3g (< 1e-5), composition %.3g (< 2e-5)", worst_rt, worst_comp)};
}

// ---- 6 -------------------------------------------------------------------------

Outcome sandwich() {
  const auto t0 = std::chrono::steady_clock::now();
  double min_slack = 1.0;
  bool holds = true;
  int cells = 0;
  for (int k = 1; k <= 30; ++k)
    for (std::size_t n = 1; n <= 50; ++n, ++cells) {
      const auto r = security::sandwich_check(0.1 * k, 1.0, n);
      min_slack = std::min(min_slack, r.min_slack);
      holds = holds && r.holds;
    }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {holds && min_slack >= -1e-12 && secs < 1.0,
          fmt("%d cells (dmu 0.1..3.0, n 1..50): min slack %.3g (>= -1e-12), %.3f s (< 1 s)", cells, min_slack, secs)};
}

// ---- 7 -------------------------------------------------------------------------

Outcome audit() {
  const auto t0 = std::chrono::steady_clock::now();
  security::AuditConfig c;
  c.theta = 0.25;
  c.n = 10;
  c.trials = 1000;
  c.seed = 2024;
  const auto r = security::theorem_bound_audit(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = r.p_hat >= 0.209 && r.p_hat <= 0.291 && r.holds && secs < 120.0;
  return {ok, fmt("p_hat %.3f in [0.209, 0.291], bound %.3f, holds=%s, %.1f s (< 120 s)", r.p_hat, r.bound,
                  r.holds ? "true" : "false", secs)};
}

// ---- 8 -------------------------------------------------------------------------

Outcome tv() {
  Rng rng(8);
  const Matrix p = standard_normal_matrix(100000, 1, rng);
  const Matrix q = standard_normal_matrix(100000, 1, rng).array() + 1.0;
  const auto est = security::tv_empirical(p, q, rng);
  const double truth = 0.382925;
  return {std::abs(est.value - truth) <= 0.03,
          fmt("estimate %.4f (%s, ci +-%.4f) vs analytic %.6f, |diff| %.4f (<= 0.03)", est.value,
              security::to_string(est.method).c_str(), est.ci_halfwidth, truth, std::abs(est.value - truth))};
}

// ---- 9 -------------------------------------------------------------------------

Outcome training() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(9);
  const auto tr = data::gaussian_mixture_2d(4000, rng);
  const auto te = data::gaussian_mixture_2d(2000, rng);
  train::TrainConfig c;  // defaults: Adam 1e-3, batch 256, 2000 steps, 6 blocks
  c.seed = 9;
  const auto r = train::train_flow(tr.samples, c);
  const FlowModel untrained = flow::build_flow(2, c.architecture, c.seed);
  const double bpd_trained = flow::bits_per_dim_continuous(r.model, te.samples);
  const double bpd_untrained = flow::bits_per_dim_continuous(untrained, te.samples);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = r.final_nll <= 0.7 * r.initial_nll && bpd_trained < bpd_untrained && secs < 300.0;
  return {ok, fmt("NLL %.4f -> %.4f (ratio %.3f <= 0.7); test bpd trained %.3f < untrained %.3f; %.1f s (< 300 s)",
                  r.initial_nll, r.final_nll, r.final_nll / r.initial_nll, bpd_trained, bpd_untrained, secs)};
}

// ---- 10 ------------------------------------------------------------------------

Outcome dlg() {
  using namespace leakage;
  const auto t0 = std::chrono::steady_clock::now();

  int linear_ok = 0;
  const int linear_seeds = 10;
  for (int s = 0; s < linear_seeds; ++s) {
    Rng rng(derive_seed(10, s));
    const Victim lin = LinearVictim{standard_normal_matrix(8, 1, rng).col(0), 0.1};
    const Vector x = standard_normal_matrix(8, 1, rng).col(0);
    const Vector y = Vector::Constant(1, 3.0);
    DlgConfig c;
    c.optimizer = DlgOptimizer::kLbfgs;
    c.learning_rate = 1.0;
    c.iterations = 200;
    c.seed = static_cast<std::uint64_t>(s);
    c.known_label = y;
    c.restarts = 4;
    const auto r = dlg_attack(lin, compute_gradients(lin, x, y), c);
    linear_ok += (r.x - x).cwiseAbs().maxCoeff() < 1e-6;
  }

  int reduced = 0;
  const int net_seeds = 20;
  for (int s = 0; s < net_seeds; ++s) {
    Rng rng(derive_seed(20, s));
    const auto net = make_toy_classifier(64, 16, 4, rng);
    const Vector x = standard_normal_matrix(64, 1, rng).col(0);
    const auto label = static_cast<std::size_t>(s % 4);
    DlgConfig c;
    c.iterations = 300;
    c.seed = static_cast<std::uint64_t>(s);
    c.known_label = one_hot(label, 4);
    const auto r = dlg_attack(Victim{net}, compute_gradients(net, x, label), c);
    reduced += r.final_loss <= 0.01 * r.initial_loss;
  }

  // Encrypted inputs at m = 64: the attacker only ever reaches the ciphertext.
  int ratio_ok = 0;
  const int enc_seeds = 5;
  double worst_ratio = INFINITY;
  for (int s = 0; s < enc_seeds; ++s) {
    Rng rng(derive_seed(30, s));
    const auto net = make_toy_classifier(64, 16, 4, rng);
    const auto ctx = crypt::make_context(perturbed_flow(64, 2, 16, derive_seed(31, s), 0.1),
                                         linalg::sample_haar_orthogonal(64, derive_seed(32, s)));
    const Vector orig = standard_normal_matrix(64, 1, rng).col(0);
    const Vector enc = crypt::encrypt_sample(ctx, orig);
    const auto label = static_cast<std::size_t>(s % 4);
    DlgConfig c;
    c.iterations = 300;
    c.seed = static_cast<std::uint64_t>(s);
    c.known_label = one_hot(label, 4);
    const auto r = dlg_attack(Victim{net}, compute_gradients(net, enc, label), c);
    const double ratio = mse(r.x, orig) / mse(r.x, enc);
    worst_ratio = std::min(worst_ratio, ratio);
    ratio_ok += ratio >= 100.0;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = linear_ok == linear_seeds && reduced >= 0.8 * net_seeds && ratio_ok == enc_seeds && secs < 180.0;
  return {ok, fmt("linear %d/%d within 1e-6; m=64 net %d/%d seeds >= 99%% loss reduction (>= 80%%); "
                  "encrypted %d/%d with mse_orig/mse_enc >= 100 (min %.3g); %.1f s (< 180 s)",
                  linear_ok, linear_seeds, reduced, net_seeds, ratio_ok, enc_seeds, worst_ratio, secs)};
}

// ---- 11 ------------------------------------------------------------------------

struct SpecificityResult {
  double acc_encrypted = 0.0;
  double acc_original = 0.0;
};

SpecificityResult specificity_run(const crypt::ClasswiseContext& ctx, const data::LabeledData& train_set,
                                  const data::LabeledData& test_set) {
  const auto enc_train = crypt::encrypt_dataset(ctx, train_set);
  const auto enc_test = crypt::encrypt_dataset(ctx, test_set);
  const std::vector<int> ytr(train_set.labels->begin(), train_set.labels->end());
  const std::vector<int> yte(test_set.labels->begin(), test_set.labels->end());
  const auto model = classify::fit_logistic(classify::quadratic_features(enc_train.samples), ytr);
  return {classify::accuracy(model, classify::quadratic_features(enc_test.samples), yte),
          classify::accuracy(model, classify::quadratic_features(test_set.samples), yte)};
}

Outcome specificity(std::string& extra) {
  const std::size_t m = 8;
  const double shift = 3.0;
  Rng rng(11);
  const auto train_set = data::two_class_gaussian(4000, m, shift, rng);
  const auto test_set = data::two_class_gaussian(2000, m, shift, rng);

  train::TrainConfig c;
  c.steps = 1000;
  c.seed = 11;
  c.learning_rate = 2e-3;
  c.architecture = {4, 32, 2.0};
  const auto pooled = train::train_flow(train_set.samples, c);
  const auto shared = crypt::shared_flow_classwise_context(pooled.model, {0, 1}, 12);
  const auto r = specificity_run(shared, train_set, test_set);

  // Informational: one flow per class. Each class is pushed to N(0, I), rotated
  // and pulled back through its own flow, so encrypted samples keep their
  // class distribution and specificity is not expected here.
  const auto per_class = crypt::train_classwise_context(train_set, c, 12);
  const auto rp = specificity_run(per_class, train_set, test_set);
  extra = fmt("     (info) one flow per class: acc encrypted %.3f, original %.3f, gap %.1f pp",
              rp.acc_encrypted, rp.acc_original, 100 * (rp.acc_encrypted - rp.acc_original));

  const double gap = r.acc_encrypted - r.acc_original;
  return {gap >= 0.20, fmt("pooled flow + per-class keys: acc encrypted %.3f, original %.3f, gap %.1f pp (>= 20)",
                           r.acc_encrypted, r.acc_original, 100 * gap)};
}

}  // namespace

int main() {
  std::string extra;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"invertibility", invertibility},
      {"log-det", logdet},
      {"gradients", gradients},
      {"haar statistics", haar},
      {"encryption round trip", round_trip},
      {"sandwich inequality", sandwich},
      {"theorem audit", audit},
      {"tv estimator", tv},
      {"training", training},
      {"gradient leakage", dlg},
      {"specificity", [&] { return specificity(extra); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2zu %-22s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    if (i + 1 == 11 && !extra.empty()) std::printf("%s\n", extra.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
