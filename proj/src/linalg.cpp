#include "flowcrypt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "flowcrypt/error.hpp"

namespace flowcrypt::linalg {

double orthogonality_error(const Matrix& a) {
  if (a.rows() != a.cols()) return std::numeric_limits<double>::infinity();
  return (a * a.transpose() - Matrix::Identity(a.rows(), a.cols())).norm();
}

OrthogonalKey make_key(Matrix a, std::optional<std::uint64_t> seed, double tol) {
  require(a.rows() == a.cols() && a.rows() > 0, ErrorKind::kShapeMismatch,
          "orthogonal key must be a non-empty square matrix");
  require(a.allFinite(), ErrorKind::kValidation, "orthogonal key has non-finite entries");
  const double err = orthogonality_error(a);
  require(err < tol, ErrorKind::kValidation,
          "key is not orthogonal: ||AA^T - I||_F = " + std::to_string(err));
  return OrthogonalKey{std::move(a), seed};
}

OrthogonalKey identity_key(std::size_t dim) {
  require(dim > 0, ErrorKind::kInvalidArgument, "invalid dimension 0");
  const auto n = static_cast<Eigen::Index>(dim);
  return OrthogonalKey{Matrix::Identity(n, n), std::nullopt};
}

Matrix sample_haar_matrix(std::size_t dim, Rng& rng) {
  require(dim > 0, ErrorKind::kInvalidArgument, "invalid dimension 0");
  const auto n = static_cast<Eigen::Index>(dim);
  Matrix g = standard_normal_matrix(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const auto& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

OrthogonalKey sample_haar_orthogonal(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return OrthogonalKey{sample_haar_matrix(dim, rng), seed};
}

double frobenius_distance(const Matrix& m, const Matrix& a) {
  require(m.rows() == a.rows() && m.cols() == a.cols(), ErrorKind::kShapeMismatch,
          "frobenius_distance: shape mismatch");
  return (m - a).norm();
}

Matrix rotation_2d(double angle) {
  Matrix r(2, 2);
  const double c = std::cos(angle), s = std::sin(angle);
  r << c, -s, s, c;
  return r;
}

namespace {

BallSpec closed_form_ball(double theta, std::size_t dim) {
  BallSpec ball;
  ball.theta = theta;
  ball.dim = dim;
  const double root2 = std::numbers::sqrt2;
  if (dim == 1) {
    // O(1) = {+1, -1}: distances 0 and 2, each with mass 1/2.
    ball.radius = theta <= 0.5 ? 0.0 : 2.0;
    ball.volume = theta <= 0.5 ? 0.5 : 1.0;
  } else if (theta <= 0.25) {
    // Rotations by phi sit at 2*sqrt(2)*|sin(phi/2)|, so the rotation half of
    // O(2) fills volume theta at radius 2*sqrt(2)*sin(pi*theta). At theta=1/4
    // the closed ball would also swallow every reflection (distance 2).
    ball.radius = 2.0 * root2 * std::sin(std::numbers::pi * theta);
    ball.boundary = BallBoundary::kOpen;
    ball.volume = theta;
  } else if (theta <= 0.75) {
    ball.radius = 2.0;
    ball.volume = 0.75;
  } else {
    ball.radius = 2.0 * root2 * std::sin(std::numbers::pi * (theta - 0.5));
    ball.volume = theta;
  }
  ball.radius_ci_low = ball.radius_ci_high = ball.radius;
  return ball;
}

double quantile_at_rank(std::vector<double>& values, double theta) {
  // Smallest sample whose empirical CDF reaches theta.
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(theta * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n) - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank),
                   values.end());
  return values[rank];
}

}  // namespace

BallSpec ball_radius_for_volume(double theta, std::size_t dim, std::size_t mc_samples,
                                Rng& rng, std::size_t bootstrap_resamples) {
  require(theta > 0.0 && theta <= 1.0, ErrorKind::kInvalidArgument,
          "theta must lie in (0, 1]");
  require(dim > 0, ErrorKind::kInvalidArgument, "invalid dimension 0");
  require(mc_samples >= 1000, ErrorKind::kInvalidArgument, "mc_samples must be >= 1000");

  if (theta == 1.0) {
    // -A attains the triangle bound 2*sqrt(m).
    BallSpec ball;
    ball.theta = 1.0;
    ball.dim = dim;
    ball.radius = 2.0 * std::sqrt(static_cast<double>(dim));
    ball.radius_ci_low = ball.radius_ci_high = ball.radius;
    return ball;
  }
  if (dim <= 2) return closed_form_ball(theta, dim);

  // Centre independence: ||M - A||_F = ||A^T M - I||_F and A^T M is Haar, so
  // sampling around the identity suffices.
  const auto n = static_cast<Eigen::Index>(dim);
  const Matrix eye = Matrix::Identity(n, n);
  std::vector<double> dist(mc_samples);
  for (auto& d : dist) d = (sample_haar_matrix(dim, rng) - eye).norm();

  BallSpec ball;
  ball.theta = theta;
  ball.dim = dim;
  ball.volume = theta;
  {
    std::vector<double> work = dist;
    ball.radius = quantile_at_rank(work, theta);
  }

  if (bootstrap_resamples > 0) {
    std::vector<double> boot(bootstrap_resamples);
    std::vector<double> resample(mc_samples);
    std::uniform_int_distribution<std::size_t> pick(0, mc_samples - 1);
    for (auto& b : boot) {
      for (auto& r : resample) r = dist[pick(rng)];
      b = quantile_at_rank(resample, theta);
    }
    std::sort(boot.begin(), boot.end());
    const auto lo = static_cast<std::size_t>(0.025 * static_cast<double>(boot.size()));
    const auto hi = std::min(boot.size() - 1,
                             static_cast<std::size_t>(0.975 * static_cast<double>(boot.size())));
    ball.radius_ci_low = boot[lo];
    ball.radius_ci_high = boot[hi];
  } else {
    ball.radius_ci_low = ball.radius_ci_high = ball.radius;
  }
  return ball;
}

bool is_successful_recovery(const Matrix& candidate, const OrthogonalKey& key,
                            const BallSpec& ball) {
  const auto n = static_cast<Eigen::Index>(ball.dim);
  require(candidate.rows() == n && candidate.cols() == n && key.matrix.rows() == n,
          ErrorKind::kShapeMismatch, "is_successful_recovery: shape mismatch");
  const double d = frobenius_distance(candidate, key.matrix);
  const double tol = 1e-9 * std::max(1.0, ball.radius);
  if (d < ball.radius - tol) return true;
  if (d <= ball.radius + tol) return ball.boundary == BallBoundary::kClosed;
  return false;
}

io::Bytes encode_key(const OrthogonalKey& key) {
  io::ByteWriter w;
  w.magic("FKEY");
  w.u16(kKeyFormatVersion);
  const auto n = key.matrix.rows();
  w.u32(static_cast<std::uint32_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) w.f64(key.matrix(i, j));
  return std::move(w).finish_with_crc();
}

OrthogonalKey decode_key(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "key file");
  r.expect_magic("FKEY");
  const auto version = r.u16();
  require(version == kKeyFormatVersion, ErrorKind::kCorruption,
          "key file: unsupported version " + std::to_string(version));
  const auto dim = r.u32();
  require(dim > 0, ErrorKind::kCorruption, "key file: zero dimension");
  const auto n = static_cast<Eigen::Index>(dim);
  require(static_cast<std::size_t>(n) * static_cast<std::size_t>(n) <= r.remaining() / 8,
          ErrorKind::kCorruption, "key file: payload truncated");
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = r.f64();
  r.expect_end();
  return make_key(std::move(a));
}

void save_key(const OrthogonalKey& key, const std::filesystem::path& path) {
  io::write_file(path, encode_key(key));
}

OrthogonalKey load_key(const std::filesystem::path& path) {
  return decode_key(io::read_file(path));
}

}  // namespace flowcrypt::linalg
