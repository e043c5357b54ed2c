#include "flowcrypt/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "flowcrypt/error.hpp"

namespace flowcrypt::data {

io::Bytes encode_tensor(const LabeledData& data) {
  io::ByteWriter w;
  w.magic("FTNS");
  w.u16(kTensorFormatVersion);
  w.u8(2);
  w.u32(static_cast<std::uint32_t>(data.samples.rows()));
  w.u32(static_cast<std::uint32_t>(data.samples.cols()));
  for (Eigen::Index i = 0; i < data.samples.rows(); ++i)
    for (Eigen::Index j = 0; j < data.samples.cols(); ++j) w.f64(data.samples(i, j));
  if (data.labels) {
    require(data.labels->size() == static_cast<std::size_t>(data.samples.rows()),
            ErrorKind::kShapeMismatch, "label count does not match sample count");
    w.u32(static_cast<std::uint32_t>(data.labels->size()));
    for (auto l : *data.labels) w.u32(l);
  }
  return std::move(w).finish_with_crc();
}

LabeledData decode_tensor(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "tensor file");
  r.expect_magic("FTNS");
  const auto version = r.u16();
  require(version == kTensorFormatVersion, ErrorKind::kCorruption,
          "tensor file: unsupported version " + std::to_string(version));
  const auto rank = r.u8();
  require(rank >= 1, ErrorKind::kCorruption, "tensor file: rank 0");
  std::vector<std::uint64_t> dims(rank);
  for (auto& d : dims) d = r.u32();
  std::uint64_t rows = dims[0];
  std::uint64_t cols = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) cols *= dims[i];
  require(rows * cols <= r.remaining() / 8, ErrorKind::kCorruption, "tensor file: payload truncated");
  LabeledData out;
  out.samples.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < out.samples.rows(); ++i)
    for (Eigen::Index j = 0; j < out.samples.cols(); ++j) out.samples(i, j) = r.f64();
  if (r.remaining() > 0) {
    const auto count = r.u32();
    require(count == rows, ErrorKind::kCorruption, "tensor file: label count mismatch");
    std::vector<Label> labels(count);
    for (auto& l : labels) l = r.u32();
    out.labels = std::move(labels);
  }
  r.expect_end();
  return out;
}

void save_tensor(const LabeledData& data, const std::filesystem::path& path) {
  io::write_file(path, encode_tensor(data));
}

LabeledData load_tensor(const std::filesystem::path& path) {
  return decode_tensor(io::read_file(path));
}

namespace {

double parse_double(std::string_view field, std::size_t line) {
  // from_chars for double needs libstdc++ 11; it is available here.
  double v = 0.0;
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  require(ec == std::errc() && ptr == field.data() + field.size(), ErrorKind::kInvalidArgument,
          "csv line " + std::to_string(line) + ": cannot parse '" + std::string(field) + "'");
  return v;
}

}  // namespace

LabeledData read_csv(const std::filesystem::path& path, bool label_column) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      row.push_back(parse_double(std::string_view(line).substr(start, comma - start), line_no));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    require(rows.empty() || row.size() == rows.front().size(), ErrorKind::kShapeMismatch,
            "csv line " + std::to_string(line_no) + ": inconsistent column count");
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorKind::kInvalidArgument, "csv file has no samples: " + path.string());
  const auto cols = static_cast<Eigen::Index>(rows.front().size()) - (label_column ? 1 : 0);
  require(cols >= 1, ErrorKind::kShapeMismatch, "csv file has no feature columns");
  LabeledData out;
  out.samples.resize(static_cast<Eigen::Index>(rows.size()), cols);
  if (label_column) out.labels.emplace();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < cols; ++j)
      out.samples(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    if (label_column) {
      const double l = rows[i].back();
      require(l >= 0 && l == std::floor(l) && l < 4294967296.0, ErrorKind::kInvalidArgument,
              "csv row " + std::to_string(i + 1) + ": label is not a non-negative integer");
      out.labels->push_back(static_cast<Label>(l));
    }
  }
  return out;
}

void write_csv(const LabeledData& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index i = 0; i < data.samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.samples.cols(); ++j) {
      if (j) out << ',';
      out << data.samples(i, j);
    }
    if (data.labels) out << ',' << (*data.labels)[static_cast<std::size_t>(i)];
    out << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

LabeledData gaussian_mixture_2d(std::size_t n, Rng& rng, double center, double sigma) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::uniform_int_distribution<int> comp(0, 3);
  LabeledData out;
  out.samples.resize(static_cast<Eigen::Index>(n), 2);
  out.labels.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = comp(rng);
    const double cx = (c & 1) ? center : -center;
    const double cy = (c & 2) ? center : -center;
    out.samples(static_cast<Eigen::Index>(i), 0) = cx + noise(rng);
    out.samples(static_cast<Eigen::Index>(i), 1) = cy + noise(rng);
    (*out.labels)[i] = static_cast<Label>(c);
  }
  return out;
}

LabeledData two_moons(std::size_t n, Rng& rng, double noise) {
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, noise);
  LabeledData out;
  out.samples.resize(static_cast<Eigen::Index>(n), 2);
  out.labels.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double a = angle(rng);
    if (i % 2 == 0) {
      out.samples(r, 0) = std::cos(a);
      out.samples(r, 1) = std::sin(a);
    } else {
      out.samples(r, 0) = 1.0 - std::cos(a);
      out.samples(r, 1) = 0.5 - std::sin(a);
    }
    out.samples(r, 0) += jitter(rng);
    out.samples(r, 1) += jitter(rng);
    (*out.labels)[i] = static_cast<Label>(i % 2);
  }
  return out;
}

LabeledData two_class_gaussian(std::size_t n, std::size_t dim, double shift, Rng& rng) {
  const auto m = static_cast<Eigen::Index>(dim);
  const Eigen::VectorXd dir = Eigen::VectorXd::Ones(m) / std::sqrt(static_cast<double>(dim));
  LabeledData out;
  out.samples = standard_normal_matrix(static_cast<Eigen::Index>(n), m, rng);
  out.labels.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Label c = static_cast<Label>(i % 2);
    (*out.labels)[i] = c;
    out.samples.row(static_cast<Eigen::Index>(i)) += (c == 0 ? -shift : shift) * dir.transpose();
  }
  return out;
}

}  // namespace flowcrypt::data
