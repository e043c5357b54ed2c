#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include <Eigen/Dense>

#include "flowcrypt/binary_io.hpp"
#include "flowcrypt/rng.hpp"

namespace flowcrypt::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Secret m x m orthogonal matrix applied in feature space.
/// `seed` is set when the key was sampled here; keys loaded from disk do not
/// carry it (the FKEY container stores only the matrix).
struct OrthogonalKey {
  Matrix matrix;
  std::optional<std::uint64_t> seed;

  std::size_t dim() const { return static_cast<std::size_t>(matrix.rows()); }
};

/// ||A A^T - I||_F.
double orthogonality_error(const Matrix& a);

/// Wraps an existing matrix as a key, rejecting non-square input (kShapeMismatch)
/// and matrices with orthogonality_error >= tol (kValidation).
OrthogonalKey make_key(Matrix a, std::optional<std::uint64_t> seed = std::nullopt,
                       double tol = 1e-8);

OrthogonalKey identity_key(std::size_t dim);

/// Haar-uniform draw from O(dim): Gaussian fill, Householder QR, then column j
/// of Q is multiplied by sign(R_jj). Both rotations and reflections occur.
Matrix sample_haar_matrix(std::size_t dim, Rng& rng);

/// Same construction with a fresh generator seeded from `seed`; bit-identical
/// for equal seeds.
OrthogonalKey sample_haar_orthogonal(std::size_t dim, std::uint64_t seed);

double frobenius_distance(const Matrix& m, const Matrix& a);

/// Counter-clockwise rotation of the plane.
Matrix rotation_2d(double angle);

enum class BallBoundary { kClosed, kOpen };

/// Frobenius ball around a key that holds a theta fraction of Haar measure.
///
/// The nested family searched is open and closed balls of every radius; the
/// smallest member with normalized volume >= theta is taken. For dim >= 3 the
/// distance ||M - I||_F has no atoms so open and closed coincide and the radius
/// is the empirical theta-quantile. For dim <= 2 the distribution has atoms
/// (dim 1: {0, 2}; dim 2: every reflection sits at distance exactly 2 from a
/// rotation-centred key) and the radius, boundary and achieved volume are
/// computed in closed form.
struct BallSpec {
  double theta = 1.0;
  std::size_t dim = 0;
  double radius = 0.0;
  BallBoundary boundary = BallBoundary::kClosed;
  /// Normalized volume of the chosen ball; equals theta except at atoms.
  double volume = 1.0;
  /// Bootstrap 95% interval of the radius (degenerate for closed forms).
  double radius_ci_low = 0.0;
  double radius_ci_high = 0.0;
};

inline constexpr std::size_t kDefaultBallSamples = 100'000;

BallSpec ball_radius_for_volume(double theta, std::size_t dim, std::size_t mc_samples,
                                Rng& rng, std::size_t bootstrap_resamples = 200);

/// True iff the candidate lies inside the ball centred on the key. Distances
/// within 1e-9 * max(1, radius) of the radius count as on the boundary.
bool is_successful_recovery(const Matrix& candidate, const OrthogonalKey& key,
                            const BallSpec& ball);

// FKEY container: "FKEY", u16 version, u32 dim, dim^2 f64 row-major, CRC-32.
inline constexpr std::uint16_t kKeyFormatVersion = 1;

io::Bytes encode_key(const OrthogonalKey& key);
OrthogonalKey decode_key(std::span<const std::uint8_t> bytes);
void save_key(const OrthogonalKey& key, const std::filesystem::path& path);
OrthogonalKey load_key(const std::filesystem::path& path);

}  // namespace flowcrypt::linalg
