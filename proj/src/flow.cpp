#include "flowcrypt/flow.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "flowcrypt/error.hpp"
#include "flowcrypt/linalg.hpp"

namespace flowcrypt::flow {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_finite(const Vector& v, const char* where) {
  require(v.allFinite(), ErrorKind::kNumerical, std::string(where) + ": non-finite input");
}

Eigen::Index layer_dim(const Layer& layer) {
  return std::visit(overloaded{
                        [](const ActNorm& l) { return l.scale.size(); },
                        [](const InvertibleLinear& l) { return l.log_diag.size(); },
                        [](const AffineCoupling& l) {
                          return static_cast<Eigen::Index>(l.mask.size());
                        },
                    },
                    layer);
}

void check_dim(const Layer& layer, const Vector& x, const char* where) {
  require(layer_dim(layer) == x.size(), ErrorKind::kShapeMismatch,
          std::string(where) + ": dimension mismatch");
}

Vector apply_perm(const std::vector<std::uint32_t>& perm, const Vector& v) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = v(perm[static_cast<std::size_t>(i)]);
  return out;
}

Vector apply_perm_transpose(const std::vector<std::uint32_t>& perm, const Vector& v) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(perm[static_cast<std::size_t>(i)]) = v(i);
  return out;
}

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

}  // namespace

Matrix InvertibleLinear::weight() const {
  const Matrix lu = unit_lower(*this) * upper_with_diag(*this);
  Matrix w(lu.rows(), lu.cols());
  for (Eigen::Index i = 0; i < lu.rows(); ++i) w.row(i) = lu.row(perm[static_cast<std::size_t>(i)]);
  return w;
}

std::vector<Eigen::Index> AffineCoupling::cond_index() const {
  std::vector<Eigen::Index> out;
  for (std::size_t d = 0; d < mask.size(); ++d)
    if (mask[d]) out.push_back(static_cast<Eigen::Index>(d));
  return out;
}

std::vector<Eigen::Index> AffineCoupling::trans_index() const {
  std::vector<Eigen::Index> out;
  for (std::size_t d = 0; d < mask.size(); ++d)
    if (!mask[d]) out.push_back(static_cast<Eigen::Index>(d));
  return out;
}

ActNorm make_actnorm(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return ActNorm{Vector::Ones(n), Vector::Zero(n), false};
}

InvertibleLinear linear_from_weight(const Matrix& weight) {
  require(weight.rows() == weight.cols() && weight.rows() > 0, ErrorKind::kShapeMismatch,
          "invertible linear weight must be square");
  const auto n = weight.rows();
  Eigen::PartialPivLU<Matrix> lu(weight);
  const Matrix packed = lu.matrixLU();
  // Eigen: P_e W = L U and P_e moves row i to row indices(i), so row i of W
  // is row indices(i) of L U.
  const auto& indices = lu.permutationP().indices();
  InvertibleLinear out;
  out.perm.resize(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r)
    out.perm[static_cast<std::size_t>(r)] = static_cast<std::uint32_t>(indices(r));
  out.lower = packed.triangularView<Eigen::StrictlyLower>();
  out.upper = packed.triangularView<Eigen::StrictlyUpper>();
  out.sign.resize(n);
  out.log_diag.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = packed(i, i);
    require(d != 0.0 && std::isfinite(d), ErrorKind::kNumerical,
            "invertible linear weight is singular");
    out.sign(i) = d < 0 ? -1.0 : 1.0;
    out.log_diag(i) = std::log(std::abs(d));
  }
  return out;
}

InvertibleLinear random_rotation_linear(std::size_t dim, Rng& rng) {
  Matrix q = linalg::sample_haar_matrix(dim, rng);
  if (q.determinant() < 0) q.col(0) = -q.col(0);
  return linear_from_weight(q);
}

std::vector<std::uint8_t> alternating_mask(std::size_t dim, std::size_t block) {
  std::vector<std::uint8_t> mask(dim);
  for (std::size_t d = 0; d < dim; ++d) mask[d] = (d + block) % 2 == 0 ? 1 : 0;
  return mask;
}

AffineCoupling make_coupling(std::vector<std::uint8_t> mask, std::size_t hidden, Rng& rng,
                             double s_max) {
  require(hidden > 0, ErrorKind::kInvalidArgument, "coupling hidden width must be positive");
  require(s_max > 0, ErrorKind::kInvalidArgument, "coupling s_max must be positive");
  AffineCoupling c;
  c.mask = std::move(mask);
  c.s_max = s_max;
  const auto k = static_cast<Eigen::Index>(c.cond_index().size());
  const auto t = static_cast<Eigen::Index>(c.trans_index().size());
  const auto h = static_cast<Eigen::Index>(hidden);
  c.w1 = standard_normal_matrix(h, k, rng) / std::sqrt(static_cast<double>(std::max<Eigen::Index>(k, 1)));
  c.b1 = Vector::Zero(h);
  c.w2 = Matrix::Zero(2 * t, h);
  c.b2 = Vector::Zero(2 * t);
  return c;
}

FlowModel build_flow(std::size_t dim, const FlowArchitecture& arch, std::uint64_t seed) {
  require(dim > 0, ErrorKind::kInvalidArgument, "invalid dimension 0");
  Rng rng(seed);
  FlowModel model{dim, {}};
  for (std::size_t b = 0; b < arch.blocks; ++b) {
    model.layers.emplace_back(make_actnorm(dim));
    model.layers.emplace_back(random_rotation_linear(dim, rng));
    model.layers.emplace_back(make_coupling(alternating_mask(dim, b), arch.hidden, rng, arch.s_max));
  }
  return model;
}

ActNorm actnorm_init(ActNorm layer, const Matrix& batch) {
  require(!layer.initialized, ErrorKind::kInvalidArgument, "actnorm already initialized");
  require(batch.rows() > 0, ErrorKind::kInvalidArgument, "actnorm_init: empty batch");
  require(batch.cols() == layer.scale.size(), ErrorKind::kShapeMismatch,
          "actnorm_init: dimension mismatch");
  const Vector mean = batch.colwise().mean().transpose();
  const Matrix centered = batch.rowwise() - mean.transpose();
  const Vector var = centered.array().square().colwise().mean().transpose();
  for (Eigen::Index d = 0; d < var.size(); ++d) {
    require(var(d) > 0.0 && std::isfinite(var(d)), ErrorKind::kDegenerateData,
            "actnorm_init: zero variance in dimension " + std::to_string(d));
  }
  layer.scale = var.array().rsqrt().matrix();
  layer.bias = -mean.cwiseProduct(layer.scale);
  layer.initialized = true;
  return layer;
}

namespace detail {

CouplingActivations coupling_activations(const AffineCoupling& layer, const Vector& x) {
  const auto cond = layer.cond_index();
  const auto t = static_cast<Eigen::Index>(layer.mask.size() - cond.size());
  CouplingActivations a;
  a.x_cond.resize(static_cast<Eigen::Index>(cond.size()));
  for (std::size_t i = 0; i < cond.size(); ++i) a.x_cond(static_cast<Eigen::Index>(i)) = x(cond[i]);
  a.hidden = (layer.w1 * a.x_cond + layer.b1).array().tanh().matrix();
  const Vector out = layer.w2 * a.hidden + layer.b2;
  a.raw = out.head(t);
  a.log_scale = layer.s_max * a.raw.array().tanh().matrix();
  a.shift = out.tail(t);
  return a;
}

}  // namespace detail

LayerOutput layer_forward(const Layer& layer, const Vector& x) {
  check_dim(layer, x, "layer_forward");
  check_finite(x, "layer_forward");
  return std::visit(
      overloaded{
          [&](const ActNorm& l) {
            return LayerOutput{l.scale.cwiseProduct(x) + l.bias,
                               l.scale.array().abs().log().sum()};
          },
          [&](const InvertibleLinear& l) {
            const Vector v = upper_with_diag(l) * x;
            const Vector w = unit_lower(l) * v;
            return LayerOutput{apply_perm(l.perm, w), l.log_diag.sum()};
          },
          [&](const AffineCoupling& l) {
            const auto a = detail::coupling_activations(l, x);
            Vector y = x;
            const auto trans = l.trans_index();
            for (std::size_t i = 0; i < trans.size(); ++i) {
              const auto j = static_cast<Eigen::Index>(i);
              y(trans[i]) = x(trans[i]) * std::exp(a.log_scale(j)) + a.shift(j);
            }
            return LayerOutput{std::move(y), a.log_scale.sum()};
          },
      },
      layer);
}

Vector layer_inverse(const Layer& layer, const Vector& y) {
  check_dim(layer, y, "layer_inverse");
  check_finite(y, "layer_inverse");
  return std::visit(
      overloaded{
          [&](const ActNorm& l) -> Vector {
            require((l.scale.array() != 0.0).all(), ErrorKind::kNumerical,
                    "actnorm scale has a zero entry");
            return ((y - l.bias).array() / l.scale.array()).matrix();
          },
          [&](const InvertibleLinear& l) -> Vector {
            require(l.log_diag.allFinite() && (l.log_diag.array() > -700.0).all(),
                    ErrorKind::kNumerical, "invertible linear reconstruction is singular");
            const Vector w = apply_perm_transpose(l.perm, y);
            const Vector v = unit_lower(l).triangularView<Eigen::UnitLower>().solve(w);
            return upper_with_diag(l).triangularView<Eigen::Upper>().solve(v);
          },
          [&](const AffineCoupling& l) -> Vector {
            // Conditioning coordinates are untouched, so the conditioner can be
            // evaluated on y directly.
            const auto a = detail::coupling_activations(l, y);
            Vector x = y;
            const auto trans = l.trans_index();
            for (std::size_t i = 0; i < trans.size(); ++i) {
              const auto j = static_cast<Eigen::Index>(i);
              x(trans[i]) = (y(trans[i]) - a.shift(j)) * std::exp(-a.log_scale(j));
            }
            return x;
          },
      },
      layer);
}

LatentVector flow_forward(const FlowModel& model, const Vector& s) {
  require(static_cast<std::size_t>(s.size()) == model.dim, ErrorKind::kShapeMismatch,
          "flow_forward: dimension mismatch");
  LatentVector out{s, 0.0};
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    try {
      auto step = layer_forward(model.layers[i], out.values);
      out.values = std::move(step.y);
      out.log_det += step.log_det;
    } catch (const Error& e) {
      throw Error(e.kind(), "layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

Vector flow_inverse(const FlowModel& model, const Vector& z) {
  require(static_cast<std::size_t>(z.size()) == model.dim, ErrorKind::kShapeMismatch,
          "flow_inverse: dimension mismatch");
  Vector x = z;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    try {
      x = layer_inverse(model.layers[i], x);
    } catch (const Error& e) {
      throw Error(e.kind(), "layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return x;
}

double standard_normal_log_density(const Vector& z) {
  const double m = static_cast<double>(z.size());
  return -0.5 * m * std::log(2.0 * std::numbers::pi) - 0.5 * z.squaredNorm();
}

double log_prob(const FlowModel& model, const Vector& s) {
  const auto latent = flow_forward(model, s);
  const double lp = standard_normal_log_density(latent.values) + latent.log_det;
  require(std::isfinite(lp), ErrorKind::kNumerical, "log_prob: non-finite result");
  return lp;
}

double mean_nll(const FlowModel& model, const Matrix& batch) {
  require(batch.rows() > 0, ErrorKind::kInvalidArgument, "empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) total -= log_prob(model, batch.row(i).transpose());
  return total / static_cast<double>(batch.rows());
}

void initialize_actnorms(FlowModel& model, const Matrix& batch) {
  require(batch.rows() > 0, ErrorKind::kInvalidArgument, "empty batch");
  Matrix acts = batch;
  for (auto& layer : model.layers) {
    if (auto* an = std::get_if<ActNorm>(&layer); an && !an->initialized) {
      *an = actnorm_init(std::move(*an), acts);
    }
    for (Eigen::Index i = 0; i < acts.rows(); ++i)
      acts.row(i) = layer_forward(layer, acts.row(i).transpose()).y.transpose();
  }
}

Dequantized dequantize(const Eigen::VectorXi& x, double alpha) {
  require(alpha >= 0.0 && alpha < 0.5, ErrorKind::kInvalidArgument,
          "dequantize: alpha must lie in [0, 0.5)");
  Dequantized out;
  out.y.resize(x.size());
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    require(x(d) >= 0 && x(d) < 256, ErrorKind::kInvalidArgument,
            "dequantize: value outside [0, 256) in dimension " + std::to_string(d));
    const double p = alpha + (1.0 - alpha) * static_cast<double>(x(d)) / 256.0;
    out.y(d) = std::log(p) - std::log1p(-p);
    out.log_det += std::log1p(-alpha) - std::log(256.0) - std::log(p) - std::log1p(-p);
  }
  require(out.y.allFinite() && std::isfinite(out.log_det), ErrorKind::kInvalidArgument,
          "dequantize: value 0 maps to -inf when alpha = 0");
  return out;
}

Vector dequantize_inverse(const Vector& y, double alpha) {
  require(alpha >= 0.0 && alpha < 0.5, ErrorKind::kInvalidArgument,
          "dequantize: alpha must lie in [0, 0.5)");
  const Eigen::ArrayXd sig = 1.0 / (1.0 + (-y.array()).exp());
  return (256.0 * (sig - alpha) / (1.0 - alpha)).matrix();
}

double bits_per_dim(const FlowModel& model, const Eigen::MatrixXi& data, double alpha) {
  require(data.rows() > 0, ErrorKind::kInvalidArgument, "bits_per_dim: empty data");
  require(static_cast<std::size_t>(data.cols()) == model.dim, ErrorKind::kShapeMismatch,
          "bits_per_dim: dimension mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const auto dq = dequantize(data.row(i).transpose(), alpha);
    total -= log_prob(model, dq.y) + dq.log_det;
  }
  const double m = static_cast<double>(model.dim);
  return total / static_cast<double>(data.rows()) / (m * std::numbers::ln2);
}

double bits_per_dim_continuous(const FlowModel& model, const Matrix& data) {
  require(data.rows() > 0, ErrorKind::kInvalidArgument, "bits_per_dim: empty data");
  return mean_nll(model, data) / (static_cast<double>(model.dim) * std::numbers::ln2);
}

// ---- parameters --------------------------------------------------------------

std::size_t num_params(const Layer& layer) {
  return std::visit(overloaded{
                        [](const ActNorm& l) { return static_cast<std::size_t>(2 * l.scale.size()); },
                        [](const InvertibleLinear& l) {
                          const auto n = static_cast<std::size_t>(l.log_diag.size());
                          return n * (n - 1) + n;
                        },
                        [](const AffineCoupling& l) {
                          return static_cast<std::size_t>(l.w1.size() + l.b1.size() + l.w2.size() +
                                                          l.b2.size());
                        },
                    },
                    layer);
}

std::size_t num_params(const FlowModel& model) {
  std::size_t n = 0;
  for (const auto& l : model.layers) n += num_params(l);
  return n;
}

namespace {

void put_row_major(const Matrix& m, Vector& out, Eigen::Index& k) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(k++) = m(i, j);
}

void take_row_major(Matrix& m, const Vector& in, Eigen::Index& k) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = in(k++);
}

}  // namespace

Vector get_params(const Layer& layer) {
  Vector out(static_cast<Eigen::Index>(num_params(layer)));
  Eigen::Index k = 0;
  std::visit(overloaded{
                 [&](const ActNorm& l) {
                   out.segment(k, l.scale.size()) = l.scale;
                   k += l.scale.size();
                   out.segment(k, l.bias.size()) = l.bias;
                 },
                 [&](const InvertibleLinear& l) {
                   const auto n = l.log_diag.size();
                   for (Eigen::Index i = 0; i < n; ++i)
                     for (Eigen::Index j = 0; j < i; ++j) out(k++) = l.lower(i, j);
                   for (Eigen::Index i = 0; i < n; ++i)
                     for (Eigen::Index j = i + 1; j < n; ++j) out(k++) = l.upper(i, j);
                   out.segment(k, n) = l.log_diag;
                 },
                 [&](const AffineCoupling& l) {
                   put_row_major(l.w1, out, k);
                   out.segment(k, l.b1.size()) = l.b1;
                   k += l.b1.size();
                   put_row_major(l.w2, out, k);
                   out.segment(k, l.b2.size()) = l.b2;
                 },
             },
             layer);
  return out;
}

void set_params(Layer& layer, const Vector& params) {
  require(static_cast<std::size_t>(params.size()) == num_params(layer), ErrorKind::kShapeMismatch,
          "set_params: parameter count mismatch");
  Eigen::Index k = 0;
  std::visit(overloaded{
                 [&](ActNorm& l) {
                   l.scale = params.segment(k, l.scale.size());
                   k += l.scale.size();
                   l.bias = params.segment(k, l.bias.size());
                 },
                 [&](InvertibleLinear& l) {
                   const auto n = l.log_diag.size();
                   for (Eigen::Index i = 0; i < n; ++i)
                     for (Eigen::Index j = 0; j < i; ++j) l.lower(i, j) = params(k++);
                   for (Eigen::Index i = 0; i < n; ++i)
                     for (Eigen::Index j = i + 1; j < n; ++j) l.upper(i, j) = params(k++);
                   l.log_diag = params.segment(k, n);
                 },
                 [&](AffineCoupling& l) {
                   take_row_major(l.w1, params, k);
                   l.b1 = params.segment(k, l.b1.size());
                   k += l.b1.size();
                   take_row_major(l.w2, params, k);
                   l.b2 = params.segment(k, l.b2.size());
                 },
             },
             layer);
}

Vector get_params(const FlowModel& model) {
  Vector out(static_cast<Eigen::Index>(num_params(model)));
  Eigen::Index k = 0;
  for (const auto& l : model.layers) {
    const Vector p = get_params(l);
    out.segment(k, p.size()) = p;
    k += p.size();
  }
  return out;
}

void set_params(FlowModel& model, const Vector& params) {
  require(static_cast<std::size_t>(params.size()) == num_params(model), ErrorKind::kShapeMismatch,
          "set_params: parameter count mismatch");
  Eigen::Index k = 0;
  for (auto& l : model.layers) {
    const auto n = static_cast<Eigen::Index>(num_params(l));
    set_params(l, params.segment(k, n));
    k += n;
  }
}

// ---- FMOD ----------------------------------------------------------------------

namespace {

enum : std::uint8_t { kTagActNorm = 1, kTagLinear = 2, kTagCoupling = 3 };

void write_array(io::ByteWriter& w, std::span<const double> values) {
  w.u32(static_cast<std::uint32_t>(values.size()));
  w.f64s(values);
}

void write_array(io::ByteWriter& w, const Vector& v) {
  write_array(w, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

void write_matrix(io::ByteWriter& w, const Matrix& m) {
  w.u32(static_cast<std::uint32_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
}

std::vector<double> read_array(io::ByteReader& r, std::size_t expected, const char* name) {
  const auto len = r.u32();
  require(len == expected, ErrorKind::kCorruption,
          std::string("model file: bad length for ") + name);
  return r.f64s(len);
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix to_matrix(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[k++];
  return m;
}

std::size_t as_count(double v, const char* name) {
  require(v >= 0 && v < 1e9 && v == std::floor(v), ErrorKind::kCorruption,
          std::string("model file: bad ") + name);
  return static_cast<std::size_t>(v);
}

}  // namespace

io::Bytes encode_model(const FlowModel& model) {
  io::ByteWriter w;
  w.magic("FMOD");
  w.u16(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.dim));
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    std::visit(overloaded{
                   [&](const ActNorm& l) {
                     w.u8(kTagActNorm);
                     w.u32(3);
                     write_array(w, l.scale);
                     write_array(w, l.bias);
                     const double init = l.initialized ? 1.0 : 0.0;
                     write_array(w, std::span<const double>(&init, 1));
                   },
                   [&](const InvertibleLinear& l) {
                     w.u8(kTagLinear);
                     w.u32(5);
                     std::vector<double> perm(l.perm.begin(), l.perm.end());
                     write_array(w, perm);
                     write_array(w, l.sign);
                     write_matrix(w, l.lower);
                     write_matrix(w, l.upper);
                     write_array(w, l.log_diag);
                   },
                   [&](const AffineCoupling& l) {
                     w.u8(kTagCoupling);
                     w.u32(7);
                     std::vector<double> mask(l.mask.begin(), l.mask.end());
                     write_array(w, mask);
                     write_array(w, std::span<const double>(&l.s_max, 1));
                     const double hidden = static_cast<double>(l.b1.size());
                     write_array(w, std::span<const double>(&hidden, 1));
                     write_matrix(w, l.w1);
                     write_array(w, l.b1);
                     write_matrix(w, l.w2);
                     write_array(w, l.b2);
                   },
               },
               layer);
  }
  return std::move(w).finish_with_crc();
}

FlowModel decode_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "model file");
  r.expect_magic("FMOD");
  const auto version = r.u16();
  require(version == kModelFormatVersion, ErrorKind::kCorruption,
          "model file: unsupported version " + std::to_string(version));
  FlowModel model;
  model.dim = r.u32();
  require(model.dim > 0, ErrorKind::kCorruption, "model file: zero dimension");
  const auto m = static_cast<Eigen::Index>(model.dim);
  const auto md = model.dim;
  const auto count = r.u32();
  for (std::uint32_t li = 0; li < count; ++li) {
    const auto tag = r.u8();
    const auto arrays = r.u32();
    if (tag == kTagActNorm) {
      require(arrays == 3, ErrorKind::kCorruption, "model file: bad actnorm record");
      ActNorm l;
      l.scale = to_vector(read_array(r, md, "actnorm scale"));
      l.bias = to_vector(read_array(r, md, "actnorm bias"));
      l.initialized = read_array(r, 1, "actnorm flag")[0] != 0.0;
      model.layers.emplace_back(std::move(l));
    } else if (tag == kTagLinear) {
      require(arrays == 5, ErrorKind::kCorruption, "model file: bad linear record");
      InvertibleLinear l;
      const auto perm = read_array(r, md, "permutation");
      std::vector<bool> seen(md, false);
      for (double p : perm) {
        const auto idx = as_count(p, "permutation");
        require(idx < md && !seen[idx], ErrorKind::kCorruption, "model file: bad permutation");
        seen[idx] = true;
        l.perm.push_back(static_cast<std::uint32_t>(idx));
      }
      l.sign = to_vector(read_array(r, md, "sign"));
      l.lower = to_matrix(read_array(r, md * md, "lower"), m, m);
      l.upper = to_matrix(read_array(r, md * md, "upper"), m, m);
      l.log_diag = to_vector(read_array(r, md, "log_diag"));
      model.layers.emplace_back(std::move(l));
    } else if (tag == kTagCoupling) {
      require(arrays == 7, ErrorKind::kCorruption, "model file: bad coupling record");
      AffineCoupling l;
      for (double v : read_array(r, md, "mask")) l.mask.push_back(v != 0.0 ? 1 : 0);
      l.s_max = read_array(r, 1, "s_max")[0];
      const auto hidden = static_cast<Eigen::Index>(as_count(read_array(r, 1, "hidden")[0], "hidden"));
      const auto k = static_cast<Eigen::Index>(l.cond_index().size());
      const auto t = m - k;
      const auto hs = static_cast<std::size_t>(hidden);
      l.w1 = to_matrix(read_array(r, hs * static_cast<std::size_t>(k), "w1"), hidden, k);
      l.b1 = to_vector(read_array(r, hs, "b1"));
      l.w2 = to_matrix(read_array(r, 2 * static_cast<std::size_t>(t) * hs, "w2"), 2 * t, hidden);
      l.b2 = to_vector(read_array(r, 2 * static_cast<std::size_t>(t), "b2"));
      model.layers.emplace_back(std::move(l));
    } else {
      fail(ErrorKind::kCorruption, "model file: unknown layer tag " + std::to_string(tag));
    }
  }
  r.expect_end();
  return model;
}

void save_model(const FlowModel& model, const std::filesystem::path& path) {
  io::write_file(path, encode_model(model));
}

FlowModel load_model(const std::filesystem::path& path) {
  return decode_model(io::read_file(path));
}

}  // namespace flowcrypt::flow
