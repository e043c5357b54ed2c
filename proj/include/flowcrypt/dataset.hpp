#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "flowcrypt/binary_io.hpp"
#include "flowcrypt/rng.hpp"

namespace flowcrypt::data {

using Label = std::uint32_t;
using Matrix = Eigen::MatrixXd;

/// Samples are rows. Tensors of rank > 2 are flattened to (dims[0], prod(rest)).
struct LabeledData {
  Matrix samples;
  std::optional<std::vector<Label>> labels;
};

// FTNS container: "FTNS", u16 version, u8 rank, rank x u32 dims, f64 payload
// (row-major), optional label block (u32 count + u32 labels), CRC-32.
inline constexpr std::uint16_t kTensorFormatVersion = 1;

io::Bytes encode_tensor(const LabeledData& data);
LabeledData decode_tensor(std::span<const std::uint8_t> bytes);
void save_tensor(const LabeledData& data, const std::filesystem::path& path);
LabeledData load_tensor(const std::filesystem::path& path);

/// One sample per row. With `label_column`, the trailing column must hold
/// non-negative integers and becomes the label vector.
LabeledData read_csv(const std::filesystem::path& path, bool label_column);
void write_csv(const LabeledData& data, const std::filesystem::path& path);

// ---- toy generators ----------------------------------------------------------

/// Equal-weight mixture of four isotropic Gaussians centred at (+-c, +-c).
/// Labels hold the component index.
LabeledData gaussian_mixture_2d(std::size_t n, Rng& rng, double center = 2.0, double sigma = 0.3);

/// Two interleaved half circles with Gaussian jitter; labels hold the moon.
LabeledData two_moons(std::size_t n, Rng& rng, double noise = 0.05);

/// Two Gaussian classes N(+-shift * e, I) in `dim` dimensions
/// (e = all-ones / sqrt(dim)); classes alternate 0, 1, 0, ...
LabeledData two_class_gaussian(std::size_t n, std::size_t dim, double shift, Rng& rng);

}  // namespace flowcrypt::data
