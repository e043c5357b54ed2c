#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "json.hpp"
#include "flowcrypt/flow.hpp"
#include "flowcrypt/linalg.hpp"
#include "flowcrypt/rng.hpp"

namespace flowcrypt::security {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

double normal_cdf(double x);
/// Inverse of normal_cdf for p in (0, 1).
double normal_quantile(double p);

// ---- total variation -----------------------------------------------------------

enum class TvMethod { kAnalytic, kHistogram, kClassifierLowerBound };
std::string to_string(TvMethod method);

struct TvEstimate {
  double value = 0.0;
  TvMethod method = TvMethod::kAnalytic;
  double ci_halfwidth = 0.0;
};

/// H0 = N(0, I); Gg = features f(s); H1 = rotated features A f(s).
enum class FeatureLabel { kH0, kGg, kH1 };

struct FeatureSamples {
  FeatureLabel label = FeatureLabel::kGg;
  Matrix vectors;  // one sample per row
};

/// TV between N(mu1, sigma^2) and N(mu2, sigma^2): 2 Phi(|mu1 - mu2| / (2 sigma)) - 1.
double tv_analytic_gaussian(double mu1, double mu2, double sigma);

inline constexpr std::size_t kMinTvSamples = 1000;

struct TvOptions {
  std::size_t bootstrap = 200;
  /// Histogram for dim <= this, classifier lower bound above.
  std::size_t max_histogram_dim = 3;
};

/// Empirical TV between the two sample sets.
///
/// dim <= 3: histogram on a shared grid of pooled per-dimension quantiles.
/// The event {p > q} is picked on one half of each set and scored on the
/// other half (then the halves swap), so equal distributions give ~0 instead
/// of the upward-biased plug-in value.
/// dim > 3: 2 * balanced accuracy - 1 of a held-out logistic separator on
/// [x, x^2] features, which is a lower bound on TV.
/// ci_halfwidth is 1.96 bootstrap standard deviations.
TvEstimate tv_empirical(const FeatureSamples& p, const FeatureSamples& q, Rng& rng,
                        const TvOptions& options = {});
TvEstimate tv_empirical(const Matrix& p, const Matrix& q, Rng& rng, const TvOptions& options = {});

// ---- sandwich inequality -------------------------------------------------------

struct SandwichReport {
  double delta_1 = 0.0;  // TV of one shifted pair
  double delta_n = 0.0;  // TV of the n-fold products
  double middle = 0.0;   // 1 - (1 - delta_1)^n
  double upper = 0.0;    // n * delta_1
  double min_slack = 0.0;
  bool holds = false;
};

/// Equal-variance Gaussians shifted by mu_delta; the n-fold product pair is a
/// 1-D shift of sqrt(n) * mu_delta.
SandwichReport sandwich_check(double mu_delta, double sigma, std::size_t n);

// ---- rotation invariance -------------------------------------------------------

struct InvarianceOptions {
  double level = 0.01;
  std::size_t null_simulations = 200;  // for the covariance threshold
  std::size_t energy_subsample = 300;
  std::size_t permutations = 199;
};

struct InvarianceReport {
  double max_abs_mean = 0.0;
  double mean_threshold = 0.0;
  bool mean_ok = false;
  double covariance_deviation = 0.0;  // ||C - I||_F of the rotated samples
  double covariance_threshold = 0.0;
  bool covariance_ok = false;
  double energy_distance = 0.0;
  double energy_p_value = 1.0;
  bool energy_ok = false;
  bool passed() const { return mean_ok && covariance_ok && energy_ok; }
};

/// Rotates `samples` by the key and tests the rotated set against N(0, I)
/// (per-dimension mean z-test with Bonferroni correction, covariance
/// deviation with a Monte Carlo null threshold) and against the original set
/// (energy distance with a permutation test).
InvarianceReport rotation_invariance_check(const FeatureSamples& samples,
                                           const linalg::OrthogonalKey& key, Rng& rng,
                                           const InvarianceOptions& options = {});

// ---- rotation recovery (m = 2) -------------------------------------------------

using LogDensity = std::function<double(const Vector&)>;

struct RecoveryResult {
  Matrix candidate;
  double angle = 0.0;  // direction of the first column, in [0, 2 pi)
  bool reflection = false;
  double log_likelihood = 0.0;
};

/// Maximizes sum_i log g(R^T x_i) over R on an angle grid, for both the
/// rotation and the reflection branch of O(2). The grid starts at a random
/// phase and exact ties (relative 1e-9) are broken uniformly, so an
/// uninformative likelihood yields a Haar-distributed guess.
RecoveryResult recover_rotation_mle(const FeatureSamples& encrypted, const LogDensity& density,
                                    std::size_t grid_size, Rng& rng);

/// Gaussian product-kernel density estimate with Scott's bandwidth.
LogDensity kde_log_density(const Matrix& samples);
LogDensity standard_normal_log_density();

// ---- theorem audit -------------------------------------------------------------

enum class FeatureSource { kExactGaussian, kTrainedFlow };

inline constexpr std::size_t kMinAuditTrials = 200;

struct AuditConfig {
  double theta = 0.25;
  std::size_t n = 10;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  std::size_t grid_size = 64;
  std::size_t threads = 1;
  std::size_t tv_samples = 20000;
  std::size_t kde_samples = 1000;
  std::size_t ball_samples = linalg::kDefaultBallSamples;
};

struct AuditReport {
  static constexpr int kSchemaVersion = 1;
  FeatureSource source = FeatureSource::kExactGaussian;
  double theta = 0.0;
  std::size_t n = 0;
  std::size_t trials = 0;
  TvEstimate tv;
  double p_hat = 0.0;
  double bound = 0.0;
  bool holds = false;
  std::uint64_t seed = 0;
  linalg::BallSpec ball;
  std::string adversary_density;
  std::size_t grid_size = 0;
};

/// Features are exact N(0, I) draws in dimension 2; TV is analytically 0.
AuditReport theorem_bound_audit(const AuditConfig& config);
/// Features are f(s) for rows s of `data`; the adversary gets a KDE of
/// independent feature draws and TV is estimated between N(0, I) and the
/// features.
AuditReport theorem_bound_audit(const flow::FlowModel& model, const Matrix& data,
                                const AuditConfig& config);

nlohmann::json to_json(const AuditReport& report);

}  // namespace flowcrypt::security
