#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "flowcrypt/binary_io.hpp"
#include "flowcrypt/rng.hpp"

namespace flowcrypt::flow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Per-dimension affine map y = scale * x + bias with data-dependent init.
struct ActNorm {
  Vector scale;
  Vector bias;
  bool initialized = false;
};

/// Dense invertible map y = W x with W = P L (U + diag(sign * exp(log_diag))).
/// L is unit lower triangular, U strictly upper triangular, P and sign fixed.
/// Only the strictly triangular parts of `lower` / `upper` are parameters.
struct InvertibleLinear {
  std::vector<std::uint32_t> perm;  // (P v)_i = v[perm[i]]
  Vector sign;
  Matrix lower;
  Matrix upper;
  Vector log_diag;

  Matrix weight() const;
};

/// Affine coupling. Coordinates with mask 1 pass through and condition a
/// one-hidden-layer tanh network whose output gives a bounded log-scale
/// s_max * tanh(raw) and a shift for the mask-0 coordinates.
struct AffineCoupling {
  std::vector<std::uint8_t> mask;
  double s_max = 2.0;
  Matrix w1;  // hidden x |cond|
  Vector b1;
  Matrix w2;  // 2|trans| x hidden; rows [0,t) raw log-scale, [t,2t) shift
  Vector b2;

  std::vector<Eigen::Index> cond_index() const;
  std::vector<Eigen::Index> trans_index() const;
};

using Layer = std::variant<ActNorm, InvertibleLinear, AffineCoupling>;

struct FlowModel {
  std::size_t dim = 0;
  std::vector<Layer> layers;
};

/// f(s) together with log |det df/ds|.
struct LatentVector {
  Vector values;
  double log_det = 0.0;
};

struct LayerOutput {
  Vector y;
  double log_det = 0.0;
};

// ---- construction ----------------------------------------------------------

ActNorm make_actnorm(std::size_t dim);

/// LU-factorizes `weight` with partial pivoting. Throws kNumerical when the
/// matrix is singular.
InvertibleLinear linear_from_weight(const Matrix& weight);

/// Haar rotation with det +1, so the initial log-det is 0.
InvertibleLinear random_rotation_linear(std::size_t dim, Rng& rng);

/// Output weights start at zero, so a fresh coupling is the identity.
AffineCoupling make_coupling(std::vector<std::uint8_t> mask, std::size_t hidden, Rng& rng,
                             double s_max = 2.0);

/// Alternating pattern: block b keeps coordinate d fixed iff (d + b) is even.
std::vector<std::uint8_t> alternating_mask(std::size_t dim, std::size_t block);

struct FlowArchitecture {
  std::size_t blocks = 6;
  std::size_t hidden = 64;
  double s_max = 2.0;
};

/// K blocks of (ActNorm -> InvertibleLinear -> AffineCoupling).
FlowModel build_flow(std::size_t dim, const FlowArchitecture& arch, std::uint64_t seed);

// ---- evaluation ------------------------------------------------------------

/// Sets scale/bias so the batch (one sample per row) leaves with per-dimension
/// mean 0 and population variance 1. Throws on reinitialization or on a
/// zero-variance dimension.
ActNorm actnorm_init(ActNorm layer, const Matrix& batch);

LayerOutput layer_forward(const Layer& layer, const Vector& x);
Vector layer_inverse(const Layer& layer, const Vector& y);

LatentVector flow_forward(const FlowModel& model, const Vector& s);
Vector flow_inverse(const FlowModel& model, const Vector& z);

/// log N(z; 0, I).
double standard_normal_log_density(const Vector& z);

double log_prob(const FlowModel& model, const Vector& s);

/// Mean negative log-likelihood in nats over the rows of `batch`.
double mean_nll(const FlowModel& model, const Matrix& batch);

/// Runs `batch` through the layers in order, initializing each uninitialized
/// ActNorm from the activations that reach it.
void initialize_actnorms(FlowModel& model, const Matrix& batch);

// ---- dequantization and bits-per-dimension ----------------------------------

inline constexpr double kDefaultDequantAlpha = 0.05;

struct Dequantized {
  Vector y;
  double log_det = 0.0;
};

/// y = logit(alpha + (1 - alpha) x / 256) for integer x in [0, 256).
Dequantized dequantize(const Eigen::VectorXi& x, double alpha);

/// Inverse of dequantize on the continuous scale: 256 (sigmoid(y) - alpha) / (1 - alpha).
Vector dequantize_inverse(const Vector& y, double alpha);

/// Mean over rows of -[log_prob(dequantized) + dequant log-det] / (m ln 2).
double bits_per_dim(const FlowModel& model, const Eigen::MatrixXi& data, double alpha);

/// Same quantity for data already on a continuous scale (no dequantization).
double bits_per_dim_continuous(const FlowModel& model, const Matrix& data);

// ---- parameters ------------------------------------------------------------

std::size_t num_params(const Layer& layer);
std::size_t num_params(const FlowModel& model);

/// Flat parameter views. Order per layer: ActNorm (scale, bias);
/// InvertibleLinear (strict lower row-major, strict upper row-major, log_diag);
/// AffineCoupling (w1 row-major, b1, w2 row-major, b2).
Vector get_params(const Layer& layer);
void set_params(Layer& layer, const Vector& params);
Vector get_params(const FlowModel& model);
void set_params(FlowModel& model, const Vector& params);

// ---- FMOD container ----------------------------------------------------------

inline constexpr std::uint16_t kModelFormatVersion = 1;

io::Bytes encode_model(const FlowModel& model);
FlowModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const FlowModel& model, const std::filesystem::path& path);
FlowModel load_model(const std::filesystem::path& path);

// ---- internals shared with the training code ---------------------------------

namespace detail {

struct CouplingActivations {
  Vector x_cond;
  Vector hidden;     // tanh(w1 x_cond + b1)
  Vector raw;        // first t outputs
  Vector log_scale;  // s_max * tanh(raw)
  Vector shift;
};

CouplingActivations coupling_activations(const AffineCoupling& layer, const Vector& x);

}  // namespace detail

}  // namespace flowcrypt::flow
