#include "flowcrypt/security.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <thread>
#include <vector>

#include "flowcrypt/classify.hpp"
#include "flowcrypt/error.hpp"

namespace flowcrypt::security {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, ErrorKind::kInvalidArgument, "quantile level must lie in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::string to_string(TvMethod method) {
  switch (method) {
    case TvMethod::kAnalytic: return "analytic";
    case TvMethod::kHistogram: return "histogram";
    case TvMethod::kClassifierLowerBound: return "classifier-lower-bound";
  }
  return "unknown";
}

double tv_analytic_gaussian(double mu1, double mu2, double sigma) {
  require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::kInvalidArgument, "sigma must be positive");
  require(std::isfinite(mu1) && std::isfinite(mu2), ErrorKind::kInvalidArgument, "means must be finite");
  // 2 Phi(d / 2 sigma) - 1 = erf(d / (2 sqrt2 sigma)), without the cancellation.
  return std::erf(std::abs(mu1 - mu2) / (2.0 * std::numbers::sqrt2 * sigma));
}

// ---- empirical TV ----------------------------------------------------------------

namespace {

using Index = std::vector<std::size_t>;

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size() - 1));
}

// Cross-fitted histogram TV on precomputed cell ids. `ps` / `qs` are the
// (possibly resampled) row indices into the cell arrays.
double crossfit_histogram(const std::vector<std::uint32_t>& pcell, const std::vector<std::uint32_t>& qcell,
                          Index ps, Index qs, std::size_t cells, Rng& rng) {
  std::shuffle(ps.begin(), ps.end(), rng);
  std::shuffle(qs.begin(), qs.end(), rng);
  const std::size_t ph = ps.size() / 2, qh = qs.size() / 2;
  std::vector<double> p1(cells, 0.0), p2(cells, 0.0), q1(cells, 0.0), q2(cells, 0.0);
  for (std::size_t i = 0; i < ps.size(); ++i) (i < ph ? p1 : p2)[pcell[ps[i]]] += 1.0;
  for (std::size_t i = 0; i < qs.size(); ++i) (i < qh ? q1 : q2)[qcell[qs[i]]] += 1.0;
  const double np1 = double(ph), np2 = double(ps.size() - ph);
  const double nq1 = double(qh), nq2 = double(qs.size() - qh);
  double a = 0.0, b = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    if (p1[c] / np1 > q1[c] / nq1) a += p2[c] / np2 - q2[c] / nq2;
    if (p2[c] / np2 > q2[c] / nq2) b += p1[c] / np1 - q1[c] / nq1;
  }
  return std::clamp(0.5 * (a + b), 0.0, 1.0);
}

TvEstimate histogram_tv(const Matrix& p, const Matrix& q, Rng& rng, const TvOptions& options) {
  const auto dim = static_cast<std::size_t>(p.cols());
  const double n_half = 0.5 * double(std::min(p.rows(), q.rows()));
  const auto bins = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::floor(std::pow(n_half, 1.0 / double(dim + 2)))));

  // Interior edges at pooled quantiles, per dimension.
  std::vector<std::vector<double>> edges(dim);
  std::vector<double> pooled(static_cast<std::size_t>(p.rows() + q.rows()));
  for (std::size_t d = 0; d < dim; ++d) {
    const auto col = static_cast<Eigen::Index>(d);
    for (Eigen::Index i = 0; i < p.rows(); ++i) pooled[static_cast<std::size_t>(i)] = p(i, col);
    for (Eigen::Index i = 0; i < q.rows(); ++i) pooled[static_cast<std::size_t>(p.rows() + i)] = q(i, col);
    std::sort(pooled.begin(), pooled.end());
    for (std::size_t k = 1; k < bins; ++k)
      edges[d].push_back(pooled[k * (pooled.size() - 1) / bins]);
  }
  auto cells_of = [&](const Matrix& x) {
    std::vector<std::uint32_t> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::size_t cell = 0;
      for (std::size_t d = dim; d-- > 0;) {
        const auto& e = edges[d];
        const auto bin = static_cast<std::size_t>(
            std::upper_bound(e.begin(), e.end(), x(i, static_cast<Eigen::Index>(d))) - e.begin());
        cell = cell * bins + bin;
      }
      out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(cell);
    }
    return out;
  };
  std::size_t cells = 1;
  for (std::size_t d = 0; d < dim; ++d) cells *= bins;
  const auto pcell = cells_of(p);
  const auto qcell = cells_of(q);

  Index pid(pcell.size()), qid(qcell.size());
  std::iota(pid.begin(), pid.end(), 0);
  std::iota(qid.begin(), qid.end(), 0);

  TvEstimate est;
  est.method = TvMethod::kHistogram;
  est.value = crossfit_histogram(pcell, qcell, pid, qid, cells, rng);

  std::vector<double> boot;
  boot.reserve(options.bootstrap);
  std::uniform_int_distribution<std::size_t> pick_p(0, pid.size() - 1), pick_q(0, qid.size() - 1);
  for (std::size_t b = 0; b < options.bootstrap; ++b) {
    Index ps(pid.size()), qs(qid.size());
    for (auto& i : ps) i = pick_p(rng);
    for (auto& i : qs) i = pick_q(rng);
    boot.push_back(crossfit_histogram(pcell, qcell, std::move(ps), std::move(qs), cells, rng));
  }
  est.ci_halfwidth = 1.96 * stddev(boot);
  return est;
}

Matrix take_rows(const Matrix& x, const Index& rows, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), x.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

TvEstimate classifier_tv(const Matrix& p, const Matrix& q, Rng& rng, const TvOptions& options) {
  // Balanced classes: both sets are cut to the smaller size, then halved.
  const auto n = static_cast<std::size_t>(std::min(p.rows(), q.rows()));
  Index pr(static_cast<std::size_t>(p.rows())), qr(static_cast<std::size_t>(q.rows()));
  std::iota(pr.begin(), pr.end(), 0);
  std::iota(qr.begin(), qr.end(), 0);
  std::shuffle(pr.begin(), pr.end(), rng);
  std::shuffle(qr.begin(), qr.end(), rng);
  const std::size_t half = n / 2;

  Matrix train(static_cast<Eigen::Index>(2 * half), p.cols());
  train.topRows(static_cast<Eigen::Index>(half)) = take_rows(p, pr, 0, half);
  train.bottomRows(static_cast<Eigen::Index>(half)) = take_rows(q, qr, 0, half);
  std::vector<int> y(2 * half, 0);
  std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(half), 1);

  // Standardize on the training split so the ridge penalty is scale-free.
  Matrix feats = classify::quadratic_features(train);
  const Eigen::RowVectorXd mean = feats.colwise().mean();
  Eigen::RowVectorXd sd = ((feats.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) if (!(sd(j) > 0)) sd(j) = 1.0;
  auto standardize = [&](const Matrix& x) {
    Matrix f = classify::quadratic_features(x);
    return Matrix((f.rowwise() - mean).array().rowwise() / sd.array());
  };
  const auto model = classify::fit_logistic(standardize(train), y);

  const auto hit_p = classify::predict(model, standardize(take_rows(p, pr, half, n)));
  const auto hit_q = classify::predict(model, standardize(take_rows(q, qr, half, n)));
  auto score = [&](const Index& ip, const Index& iq) {
    double a = 0.0, b = 0.0;
    for (auto i : ip) a += hit_p[i];
    for (auto i : iq) b += hit_q[i];
    // P(A) - Q(A) for A = "classified as p" = 2 * balanced accuracy - 1.
    return a / double(ip.size()) - b / double(iq.size());
  };
  Index ip(hit_p.size()), iq(hit_q.size());
  std::iota(ip.begin(), ip.end(), 0);
  std::iota(iq.begin(), iq.end(), 0);

  TvEstimate est;
  est.method = TvMethod::kClassifierLowerBound;
  est.value = std::clamp(score(ip, iq), 0.0, 1.0);
  std::vector<double> boot;
  std::uniform_int_distribution<std::size_t> pick_p(0, ip.size() - 1), pick_q(0, iq.size() - 1);
  for (std::size_t b = 0; b < options.bootstrap; ++b) {
    Index bp(ip.size()), bq(iq.size());
    for (auto& i : bp) i = pick_p(rng);
    for (auto& i : bq) i = pick_q(rng);
    boot.push_back(std::clamp(score(bp, bq), 0.0, 1.0));
  }
  est.ci_halfwidth = 1.96 * stddev(boot);
  return est;
}

}  // namespace

TvEstimate tv_empirical(const Matrix& p, const Matrix& q, Rng& rng, const TvOptions& options) {
  require(p.cols() == q.cols(), ErrorKind::kShapeMismatch,
          "sample sets have different dimensions (" + std::to_string(p.cols()) + " vs " +
              std::to_string(q.cols()) + ")");
  require(p.cols() > 0, ErrorKind::kInvalidArgument, "samples have dimension 0");
  require(static_cast<std::size_t>(p.rows()) >= kMinTvSamples &&
              static_cast<std::size_t>(q.rows()) >= kMinTvSamples,
          ErrorKind::kInvalidArgument,
          "TV estimation needs at least " + std::to_string(kMinTvSamples) + " samples per set");
  require(p.allFinite() && q.allFinite(), ErrorKind::kNumerical, "non-finite samples");
  if (static_cast<std::size_t>(p.cols()) <= options.max_histogram_dim) return histogram_tv(p, q, rng, options);
  return classifier_tv(p, q, rng, options);
}

TvEstimate tv_empirical(const FeatureSamples& p, const FeatureSamples& q, Rng& rng,
                        const TvOptions& options) {
  return tv_empirical(p.vectors, q.vectors, rng, options);
}

// ---- sandwich ------------------------------------------------------------------------

SandwichReport sandwich_check(double mu_delta, double sigma, std::size_t n) {
  require(n >= 1, ErrorKind::kInvalidArgument, "n must be at least 1");
  SandwichReport r;
  r.delta_1 = tv_analytic_gaussian(0.0, mu_delta, sigma);
  r.delta_n = tv_analytic_gaussian(0.0, std::sqrt(double(n)) * mu_delta, sigma);
  r.middle = 1.0 - std::pow(1.0 - r.delta_1, double(n));
  r.upper = double(n) * r.delta_1;
  r.min_slack = std::min(r.middle - r.delta_n, r.upper - r.middle);
  r.holds = r.min_slack >= -1e-12;
  return r;
}

// ---- rotation invariance --------------------------------------------------------------

namespace {

double covariance_deviation(const Matrix& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Matrix centred = x.rowwise() - mean;
  const Matrix cov = centred.transpose() * centred / double(x.rows() - 1);
  return (cov - Matrix::Identity(x.cols(), x.cols())).norm();
}

Matrix distance_matrix(const Matrix& pts) {
  const Matrix t = pts.transpose();
  Matrix dist(pts.rows(), pts.rows());
  for (Eigen::Index j = 0; j < pts.rows(); ++j)
    for (Eigen::Index i = 0; i < pts.rows(); ++i) dist(i, j) = (t.col(i) - t.col(j)).norm();
  return dist;
}

// Energy distance between samples x_a and their rotations y_a (pooled as
// rows [0, k) and [k, 2k)). Partner pairs (x_a, y_a) are left out, so every
// term is a between-sample distance. The four pairs of samples a < b are
// summed together, which makes an identity rotation cancel exactly.
double paired_energy_distance(const Matrix& dist, std::size_t k) {
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
      const auto ka = static_cast<Eigen::Index>(k + a), kb = static_cast<Eigen::Index>(k + b);
      xx += dist(ia, ib);
      yy += dist(ka, kb);
      xy += dist(ia, kb) + dist(ka, ib);
    }
  }
  const double pairs = double(k) * double(k - 1) / 2.0;
  return 2.0 * xy / (2.0 * pairs) - xx / pairs - yy / pairs;
}

// Two-sample V-statistic energy distance for the 0/1 group indicator `g`.
// With s = D g: sum_YY = g.s, sum_XY = (1 - g).s, sum_XX = total - ...
double energy_statistic(const Matrix& dist, const Vector& g, double total) {
  const Vector s = dist * g;
  const double ny = g.sum();
  const double nx = double(g.size()) - ny;
  const double yy = g.dot(s);
  const double xy = s.sum() - yy;
  const double xx = total - yy - 2.0 * xy;
  return 2.0 * xy / (nx * ny) - xx / (nx * nx) - yy / (ny * ny);
}

}  // namespace

InvarianceReport rotation_invariance_check(const FeatureSamples& samples,
                                           const linalg::OrthogonalKey& key, Rng& rng,
                                           const InvarianceOptions& options) {
  const Matrix& x = samples.vectors;
  require(static_cast<std::size_t>(x.rows()) >= kMinTvSamples, ErrorKind::kInvalidArgument,
          "rotation invariance check needs at least " + std::to_string(kMinTvSamples) + " samples");
  require(static_cast<std::size_t>(x.cols()) == key.dim(), ErrorKind::kShapeMismatch,
          "sample dimension does not match the key");
  require(options.level > 0.0 && options.level < 1.0, ErrorKind::kInvalidArgument,
          "test level must lie in (0, 1)");
  const auto n = x.rows();
  const auto m = x.cols();
  const Matrix rotated = x * key.matrix.transpose();

  InvarianceReport r;
  // (a) Bonferroni-corrected two-sided z-test on each coordinate mean.
  r.max_abs_mean = rotated.colwise().mean().cwiseAbs().maxCoeff();
  r.mean_threshold = normal_quantile(1.0 - options.level / (2.0 * double(m))) / std::sqrt(double(n));
  r.mean_ok = r.max_abs_mean <= r.mean_threshold;

  // (b) covariance deviation against its simulated null distribution.
  r.covariance_deviation = covariance_deviation(rotated);
  std::vector<double> null(options.null_simulations);
  for (auto& v : null) v = covariance_deviation(standard_normal_matrix(n, m, rng));
  std::sort(null.begin(), null.end());
  const auto qi = static_cast<std::size_t>(std::ceil((1.0 - options.level) * double(null.size()))) - 1;
  r.covariance_threshold = null[std::min(qi, null.size() - 1)];
  r.covariance_ok = r.covariance_deviation <= r.covariance_threshold;

  // (c) energy distance. The reported value pairs each sample with its own
  // rotation. The permutation test compares originals against rotations of
  // a disjoint set of rows, because labels are only exchangeable under the
  // null when the two sets are independent.
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  std::shuffle(rows.begin(), rows.end(), rng);
  const std::size_t k = std::min<std::size_t>(options.energy_subsample, rows.size() / 2);
  Matrix paired(static_cast<Eigen::Index>(2 * k), m), split(static_cast<Eigen::Index>(2 * k), m);
  for (std::size_t i = 0; i < k; ++i) {
    const auto ii = static_cast<Eigen::Index>(i), ki = static_cast<Eigen::Index>(k + i);
    paired.row(ii) = x.row(rows[i]);
    paired.row(ki) = rotated.row(rows[i]);
    split.row(ii) = x.row(rows[i]);
    split.row(ki) = rotated.row(rows[k + i]);
  }
  r.energy_distance = paired_energy_distance(distance_matrix(paired), k);

  const Matrix dist = distance_matrix(split);
  const double total = dist.sum();
  Vector group = Vector::Zero(static_cast<Eigen::Index>(2 * k));
  group.tail(static_cast<Eigen::Index>(k)).setOnes();
  const double observed = energy_statistic(dist, group, total);
  std::size_t exceed = 0;
  for (std::size_t p = 0; p < options.permutations; ++p) {
    std::shuffle(group.begin(), group.end(), rng);
    exceed += energy_statistic(dist, group, total) >= observed;
  }
  r.energy_p_value = double(1 + exceed) / double(1 + options.permutations);
  r.energy_ok = r.energy_p_value > options.level;
  return r;
}

// ---- recovery ------------------------------------------------------------------------

LogDensity standard_normal_log_density() {
  return [](const Vector& z) { return flow::standard_normal_log_density(z); };
}

LogDensity kde_log_density(const Matrix& samples) {
  require(samples.rows() >= 2, ErrorKind::kInvalidArgument, "KDE needs at least two samples");
  const auto n = samples.rows();
  const auto d = samples.cols();
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  Vector h = ((samples.rowwise() - mean).array().square().colwise().sum() / double(n - 1)).sqrt().transpose();
  h *= std::pow(double(n), -1.0 / double(d + 4));
  for (Eigen::Index j = 0; j < d; ++j)
    require(h(j) > 0.0, ErrorKind::kDegenerateData, "KDE samples have zero variance in dimension " + std::to_string(j));
  const double log_norm = -0.5 * double(d) * std::log(2.0 * std::numbers::pi) - h.array().log().sum() - std::log(double(n));
  const Matrix scaled = samples.array().rowwise() / h.transpose().array();
  return [scaled, h, log_norm](const Vector& z) {
    const Eigen::RowVectorXd zs = (z.array() / h.array()).matrix().transpose();
    const Vector e = -0.5 * (scaled.rowwise() - zs).rowwise().squaredNorm();
    const double top = e.maxCoeff();
    return log_norm + top + std::log((e.array() - top).exp().sum());
  };
}

RecoveryResult recover_rotation_mle(const FeatureSamples& encrypted, const LogDensity& density,
                                    std::size_t grid_size, Rng& rng) {
  require(grid_size >= 8, ErrorKind::kInvalidArgument, "grid size must be at least 8");
  require(encrypted.vectors.cols() == 2, ErrorKind::kShapeMismatch, "rotation recovery is implemented for dimension 2");
  require(encrypted.vectors.rows() >= 1, ErrorKind::kInvalidArgument, "no encrypted samples");
  const Matrix& x = encrypted.vectors;
  const double offset = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);

  std::vector<double> score(2 * grid_size);
  for (std::size_t k = 0; k < grid_size; ++k) {
    const double phi = offset + 2.0 * std::numbers::pi * double(k) / double(grid_size);
    for (int refl = 0; refl < 2; ++refl) {
      Matrix c = linalg::rotation_2d(phi);
      if (refl) c.col(1) *= -1.0;
      const Matrix back = x * c;  // rows are (C^T x_i)^T
      double s = 0.0;
      for (Eigen::Index i = 0; i < back.rows(); ++i) s += density(back.row(i).transpose());
      score[2 * k + static_cast<std::size_t>(refl)] = s;
    }
  }
  const double best = *std::max_element(score.begin(), score.end());
  require(std::isfinite(best), ErrorKind::kNumerical, "log-likelihood is not finite on the grid");
  const double tol = 1e-9 * std::max(1.0, std::abs(best));
  std::vector<std::size_t> ties;
  for (std::size_t i = 0; i < score.size(); ++i)
    if (score[i] >= best - tol) ties.push_back(i);
  const auto pick = ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];

  RecoveryResult r;
  const double phi = offset + 2.0 * std::numbers::pi * double(pick / 2) / double(grid_size);
  r.reflection = pick % 2 == 1;
  r.candidate = linalg::rotation_2d(phi);
  if (r.reflection) r.candidate.col(1) *= -1.0;
  r.angle = std::fmod(phi, 2.0 * std::numbers::pi);
  r.log_likelihood = score[pick];
  return r;
}

// ---- audit ---------------------------------------------------------------------------

namespace {

template <typename Trial>
std::size_t run_trials(const AuditConfig& config, Trial trial) {
  std::vector<char> success(config.trials, 0);
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.threads, config.trials));
  if (workers == 1) {
    for (std::size_t t = 0; t < config.trials; ++t) success[t] = trial(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t t = next++; t < config.trials; t = next++) success[t] = trial(t);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) if (e) std::rethrow_exception(e);
  }
  return static_cast<std::size_t>(std::count(success.begin(), success.end(), 1));
}

void validate_audit(const AuditConfig& c) {
  require(c.theta > 0.0 && c.theta <= 1.0, ErrorKind::kInvalidArgument, "theta must lie in (0, 1]");
  require(c.n >= 1, ErrorKind::kInvalidArgument, "n must be at least 1");
  require(c.trials >= kMinAuditTrials, ErrorKind::kInvalidArgument,
          "at least " + std::to_string(kMinAuditTrials) + " trials are required (got " + std::to_string(c.trials) + ")");
  require(c.grid_size >= 8, ErrorKind::kInvalidArgument, "grid size must be at least 8");
}

AuditReport finish(const AuditConfig& c, FeatureSource source, linalg::BallSpec ball, TvEstimate tv,
                   std::string density_label, std::size_t successes) {
  AuditReport r;
  r.source = source;
  r.theta = c.theta;
  r.n = c.n;
  r.trials = c.trials;
  r.tv = tv;
  r.seed = c.seed;
  r.grid_size = c.grid_size;
  r.adversary_density = std::move(density_label);
  r.p_hat = double(successes) / double(c.trials);
  // The ball's achieved volume stands in for theta; they differ only at the
  // atoms of the distance distribution (e.g. reflections at m = 2).
  r.bound = std::min(1.0, double(c.n) * tv.value + ball.volume);
  const double sigma = std::sqrt(r.p_hat * (1.0 - r.p_hat) / double(c.trials));
  r.holds = r.p_hat <= r.bound + 3.0 * sigma;
  r.ball = ball;
  return r;
}

linalg::BallSpec audit_ball(const AuditConfig& c) {
  Rng ball_rng(derive_seed(c.seed, 0));
  return linalg::ball_radius_for_volume(c.theta, 2, c.ball_samples, ball_rng);
}

}  // namespace

AuditReport theorem_bound_audit(const AuditConfig& config) {
  validate_audit(config);
  const auto ball = audit_ball(config);
  const auto density = standard_normal_log_density();
  const auto successes = run_trials(config, [&](std::size_t t) {
    Rng rng(derive_seed(config.seed, 1000 + t));
    const auto key = linalg::make_key(linalg::sample_haar_matrix(2, rng));
    FeatureSamples enc{FeatureLabel::kH1,
                       standard_normal_matrix(static_cast<Eigen::Index>(config.n), 2, rng) * key.matrix.transpose()};
    const auto guess = recover_rotation_mle(enc, density, config.grid_size, rng);
    return linalg::is_successful_recovery(guess.candidate, key, ball);
  });
  return finish(config, FeatureSource::kExactGaussian, ball, {0.0, TvMethod::kAnalytic, 0.0},
                "standard-normal (exact)", successes);
}

AuditReport theorem_bound_audit(const flow::FlowModel& model, const Matrix& data, const AuditConfig& config) {
  validate_audit(config);
  require(model.dim == 2 && data.cols() == 2, ErrorKind::kShapeMismatch,
          "the recovery attack is implemented for dimension 2");
  require(data.rows() >= 2, ErrorKind::kInvalidArgument, "audit needs data samples");
  const auto ball = audit_ball(config);

  Matrix features(data.rows(), 2);
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    features.row(i) = flow::flow_forward(model, data.row(i).transpose()).values.transpose();
  require(features.allFinite(), ErrorKind::kNumerical, "flow produced non-finite features");

  Rng aux(derive_seed(config.seed, 1));
  std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
  auto draw_features = [&](std::size_t count, Rng& rng) {
    Matrix out(static_cast<Eigen::Index>(count), 2);
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = features.row(pick(rng));
    return out;
  };
  const std::size_t tv_n = std::max(config.tv_samples, kMinTvSamples);
  const Matrix gauss = standard_normal_matrix(static_cast<Eigen::Index>(tv_n), 2, aux);
  const TvEstimate tv = tv_empirical(gauss, draw_features(tv_n, aux), aux);
  const auto density = kde_log_density(draw_features(config.kde_samples, aux));

  const auto successes = run_trials(config, [&](std::size_t t) {
    Rng rng(derive_seed(config.seed, 1000 + t));
    const auto key = linalg::make_key(linalg::sample_haar_matrix(2, rng));
    std::uniform_int_distribution<Eigen::Index> row(0, data.rows() - 1);
    Matrix x(static_cast<Eigen::Index>(config.n), 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) = features.row(row(rng));
    FeatureSamples enc{FeatureLabel::kH1, x * key.matrix.transpose()};
    const auto guess = recover_rotation_mle(enc, density, config.grid_size, rng);
    return linalg::is_successful_recovery(guess.candidate, key, ball);
  });
  return finish(config, FeatureSource::kTrainedFlow, ball, tv,
                "kde(" + std::to_string(config.kde_samples) + " flow features)", successes);
}

nlohmann::json to_json(const AuditReport& r) {
  nlohmann::json j;
  j["schema_version"] = AuditReport::kSchemaVersion;
  j["source"] = r.source == FeatureSource::kExactGaussian ? "exact-gaussian" : "trained-flow";
  j["theta"] = r.theta;
  j["n"] = r.n;
  j["trials"] = r.trials;
  j["tv"] = {{"value", r.tv.value}, {"method", to_string(r.tv.method)}, {"ci", r.tv.ci_halfwidth}};
  j["p_hat"] = r.p_hat;
  j["bound"] = r.bound;
  j["holds"] = r.holds;
  j["seed"] = r.seed;
  j["ball"] = {{"radius", r.ball.radius},
               {"volume", r.ball.volume},
               {"boundary", r.ball.boundary == linalg::BallBoundary::kOpen ? "open" : "closed"}};
  j["adversary_density"] = r.adversary_density;
  j["grid_size"] = r.grid_size;
  if (r.tv.method == TvMethod::kClassifierLowerBound)
    j["note"] = "tv is a classifier lower bound; a violation is only conclusive with the histogram method";
  return j;
}

}  // namespace flowcrypt::security
