#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowcrypt/dataset.hpp"
#include "flowcrypt/flow.hpp"
#include "flowcrypt/linalg.hpp"
#include "flowcrypt/train.hpp"

namespace flowcrypt::crypt {

using data::Label;
using flow::FlowModel;
using linalg::OrthogonalKey;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A trained flow paired with the secret key applied in its feature space.
struct EncryptionContext {
  FlowModel flow;
  OrthogonalKey key;
};

/// Throws kShapeMismatch when flow and key dimensions differ.
EncryptionContext make_context(FlowModel flow, OrthogonalKey key);

/// f^-1(A f(s)).
Vector encrypt_sample(const EncryptionContext& ctx, const Vector& s);
/// f^-1(A^T f(e)). With the wrong key this returns garbage, not an error.
Vector decrypt_sample(const EncryptionContext& ctx, const Vector& e);

Matrix encrypt_rows(const EncryptionContext& ctx, const Matrix& samples);
Matrix decrypt_rows(const EncryptionContext& ctx, const Matrix& samples);

/// Provenance fingerprint over the encoded model and key bytes.
std::string context_fingerprint(const EncryptionContext& ctx);

void save_context(const EncryptionContext& ctx, const std::filesystem::path& model_path,
                  const std::filesystem::path& key_path);
/// CRC mismatch -> kCorruption; non-orthogonal key -> kValidation;
/// flow/key dimension mismatch -> kShapeMismatch.
EncryptionContext load_context(const std::filesystem::path& model_path,
                               const std::filesystem::path& key_path);

// ---- per-class encryption ------------------------------------------------------

/// One context per class label. All contexts share the input dimension.
class ClasswiseContext {
 public:
  ClasswiseContext() = default;
  explicit ClasswiseContext(std::map<Label, EncryptionContext> contexts);

  const EncryptionContext& at(Label label) const;
  bool contains(Label label) const { return contexts_.count(label) != 0; }
  std::size_t dim() const { return dim_; }
  const std::map<Label, EncryptionContext>& contexts() const { return contexts_; }

 private:
  std::map<Label, EncryptionContext> contexts_;
  std::size_t dim_ = 0;
};

/// Classes with fewer samples than this are refused by train_classwise_context.
inline constexpr std::size_t kMinClassSamples = 50;

/// Trains one flow per class on that class's samples and draws an independent
/// key per class (seed derived from `seed` and the label).
ClasswiseContext train_classwise_context(const data::LabeledData& data,
                                         const train::TrainConfig& config, std::uint64_t seed);

/// Encrypted (or plain) samples with optional labels and the fingerprint of
/// the context(s) that produced them.
struct EncryptedDataset {
  Matrix samples;
  std::optional<std::vector<Label>> labels;
  std::string provenance;
};

/// One flow shared by every class, with an independent key per label (seed
/// derived from `seed` and the label, as in train_classwise_context).
ClasswiseContext shared_flow_classwise_context(const FlowModel& flow,
                                               const std::vector<Label>& labels,
                                               std::uint64_t seed);

/// Each sample is encrypted with its own class context; labels pass through.
/// An unknown label raises kShapeMismatch naming it.
EncryptedDataset encrypt_dataset(const ClasswiseContext& ctx, const data::LabeledData& data);
EncryptedDataset decrypt_dataset(const ClasswiseContext& ctx, const data::LabeledData& data);

// ---- dual-key labelling --------------------------------------------------------

using Labeler = std::function<Label(const Vector&)>;

/// One flow, two independently seeded keys: key1 encrypts the shared
/// samples, key2 encrypts what the secret labeler sees.
struct DualKeyContext {
  FlowModel flow;
  OrthogonalKey key1;
  OrthogonalKey key2;
  Labeler labeler;
};

/// Rejects equal seeds (kInvalidArgument).
DualKeyContext make_dual_key_context(FlowModel flow, std::uint64_t seed1, std::uint64_t seed2,
                                     Labeler labeler);

/// Emits (Enc1(s_i), g(Enc2(s_i))). A throwing labeler is reported with the
/// sample index.
EncryptedDataset dual_key_label(const DualKeyContext& ctx, const Matrix& samples);

}  // namespace flowcrypt::crypt
