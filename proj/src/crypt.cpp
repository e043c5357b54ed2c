#include "flowcrypt/crypt.hpp"

#include <string>

#include "flowcrypt/error.hpp"

namespace flowcrypt::crypt {

EncryptionContext make_context(FlowModel flow, OrthogonalKey key) {
  require(flow.dim == key.dim(), ErrorKind::kShapeMismatch,
          "flow dimension " + std::to_string(flow.dim) + " does not match key dimension " +
              std::to_string(key.dim()));
  return EncryptionContext{std::move(flow), std::move(key)};
}

Vector encrypt_sample(const EncryptionContext& ctx, const Vector& s) {
  const auto z = flow::flow_forward(ctx.flow, s);
  return flow::flow_inverse(ctx.flow, ctx.key.matrix * z.values);
}

Vector decrypt_sample(const EncryptionContext& ctx, const Vector& e) {
  const auto z = flow::flow_forward(ctx.flow, e);
  return flow::flow_inverse(ctx.flow, ctx.key.matrix.transpose() * z.values);
}

Matrix encrypt_rows(const EncryptionContext& ctx, const Matrix& samples) {
  Matrix out(samples.rows(), samples.cols());
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    out.row(i) = encrypt_sample(ctx, samples.row(i).transpose()).transpose();
  return out;
}

Matrix decrypt_rows(const EncryptionContext& ctx, const Matrix& samples) {
  Matrix out(samples.rows(), samples.cols());
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    out.row(i) = decrypt_sample(ctx, samples.row(i).transpose()).transpose();
  return out;
}

std::string context_fingerprint(const EncryptionContext& ctx) {
  return io::fingerprint(flow::encode_model(ctx.flow), linalg::encode_key(ctx.key));
}

void save_context(const EncryptionContext& ctx, const std::filesystem::path& model_path,
                  const std::filesystem::path& key_path) {
  flow::save_model(ctx.flow, model_path);
  linalg::save_key(ctx.key, key_path);
}

EncryptionContext load_context(const std::filesystem::path& model_path,
                               const std::filesystem::path& key_path) {
  return make_context(flow::load_model(model_path), linalg::load_key(key_path));
}

ClasswiseContext::ClasswiseContext(std::map<Label, EncryptionContext> contexts)
    : contexts_(std::move(contexts)) {
  for (const auto& [label, ctx] : contexts_) {
    if (dim_ == 0) dim_ = ctx.flow.dim;
    require(ctx.flow.dim == dim_ && ctx.key.dim() == dim_, ErrorKind::kShapeMismatch,
            "class " + std::to_string(label) + ": context dimension differs from the others");
  }
}

const EncryptionContext& ClasswiseContext::at(Label label) const {
  const auto it = contexts_.find(label);
  require(it != contexts_.end(), ErrorKind::kShapeMismatch,
          "no encryption context for label " + std::to_string(label));
  return it->second;
}

ClasswiseContext train_classwise_context(const data::LabeledData& data,
                                         const train::TrainConfig& config, std::uint64_t seed) {
  require(data.labels.has_value(), ErrorKind::kInvalidArgument,
          "per-class training needs labelled data");
  std::map<Label, std::vector<Eigen::Index>> rows_by_label;
  for (std::size_t i = 0; i < data.labels->size(); ++i)
    rows_by_label[(*data.labels)[i]].push_back(static_cast<Eigen::Index>(i));
  std::map<Label, EncryptionContext> contexts;
  for (const auto& [label, rows] : rows_by_label) {
    require(rows.size() >= kMinClassSamples, ErrorKind::kDegenerateData,
            "class " + std::to_string(label) + " has " + std::to_string(rows.size()) +
                " samples; at least " + std::to_string(kMinClassSamples) + " are required");
    Matrix class_data(static_cast<Eigen::Index>(rows.size()), data.samples.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      class_data.row(static_cast<Eigen::Index>(i)) = data.samples.row(rows[i]);
    train::TrainConfig class_config = config;
    class_config.seed = derive_seed(seed, 2 * std::uint64_t{label});
    auto trained = train::train_flow(class_data, class_config);
    auto key = linalg::sample_haar_orthogonal(static_cast<std::size_t>(data.samples.cols()),
                                              derive_seed(seed, 2 * std::uint64_t{label} + 1));
    contexts.emplace(label, make_context(std::move(trained.model), std::move(key)));
  }
  return ClasswiseContext(std::move(contexts));
}

ClasswiseContext shared_flow_classwise_context(const FlowModel& flow,
                                               const std::vector<Label>& labels,
                                               std::uint64_t seed) {
  require(!labels.empty(), ErrorKind::kInvalidArgument, "no class labels given");
  std::map<Label, EncryptionContext> contexts;
  for (auto label : labels) {
    if (contexts.count(label)) continue;
    auto key = linalg::sample_haar_orthogonal(flow.dim, derive_seed(seed, 2 * std::uint64_t{label} + 1));
    contexts.emplace(label, make_context(flow, std::move(key)));
  }
  return ClasswiseContext(std::move(contexts));
}

namespace {

EncryptedDataset map_dataset(const ClasswiseContext& ctx, const data::LabeledData& data,
                             bool encrypt) {
  require(data.labels.has_value(), ErrorKind::kInvalidArgument,
          "per-class encryption needs labelled data");
  require(data.labels->size() == static_cast<std::size_t>(data.samples.rows()),
          ErrorKind::kShapeMismatch, "label count does not match sample count");
  require(static_cast<std::size_t>(data.samples.cols()) == ctx.dim(), ErrorKind::kShapeMismatch,
          "sample dimension does not match the class contexts");
  for (auto label : *data.labels) (void)ctx.at(label);  // fail before doing any work
  EncryptedDataset out;
  out.samples.resize(data.samples.rows(), data.samples.cols());
  for (Eigen::Index i = 0; i < data.samples.rows(); ++i) {
    const auto& c = ctx.at((*data.labels)[static_cast<std::size_t>(i)]);
    const Vector s = data.samples.row(i).transpose();
    out.samples.row(i) = (encrypt ? encrypt_sample(c, s) : decrypt_sample(c, s)).transpose();
  }
  out.labels = data.labels;
  std::string prov;
  for (const auto& [label, c] : ctx.contexts()) {
    if (!prov.empty()) prov += ';';
    prov += std::to_string(label) + ':' + context_fingerprint(c);
  }
  out.provenance = std::move(prov);
  return out;
}

}  // namespace

EncryptedDataset encrypt_dataset(const ClasswiseContext& ctx, const data::LabeledData& data) {
  return map_dataset(ctx, data, true);
}

EncryptedDataset decrypt_dataset(const ClasswiseContext& ctx, const data::LabeledData& data) {
  return map_dataset(ctx, data, false);
}

DualKeyContext make_dual_key_context(FlowModel flow, std::uint64_t seed1, std::uint64_t seed2,
                                     Labeler labeler) {
  require(seed1 != seed2, ErrorKind::kInvalidArgument,
          "dual-key context needs two different key seeds");
  require(static_cast<bool>(labeler), ErrorKind::kInvalidArgument, "labeler is empty");
  const auto dim = flow.dim;
  return DualKeyContext{std::move(flow), linalg::sample_haar_orthogonal(dim, seed1),
                        linalg::sample_haar_orthogonal(dim, seed2), std::move(labeler)};
}

EncryptedDataset dual_key_label(const DualKeyContext& ctx, const Matrix& samples) {
  const EncryptionContext first = make_context(ctx.flow, ctx.key1);
  const EncryptionContext second = make_context(ctx.flow, ctx.key2);
  EncryptedDataset out;
  out.samples.resize(samples.rows(), samples.cols());
  out.labels.emplace();
  out.labels->reserve(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Vector s = samples.row(i).transpose();
    out.samples.row(i) = encrypt_sample(first, s).transpose();
    const Vector for_labeler = encrypt_sample(second, s);
    try {
      out.labels->push_back(ctx.labeler(for_labeler));
    } catch (const std::exception& e) {
      fail(ErrorKind::kInvalidArgument,
           "labeler failed on sample " + std::to_string(i) + ": " + e.what());
    }
  }
  out.provenance = context_fingerprint(first);
  return out;
}

}  // namespace flowcrypt::crypt
