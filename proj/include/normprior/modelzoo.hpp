#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "normprior/corpus.hpp"
#include "normprior/labels.hpp"

namespace normprior::modelzoo {

enum class Family { kLinearBaseline, kRecurrent, kPyramidConv, kTransformerFinetune };
enum class Embedding { kPretrainedStatic, kLearned, kRegion, kContextual };
enum class OptimizerKind { kAdaptiveMoment, kPlainSgd };

std::string_view to_string(Family f);
std::string_view to_string(Embedding e);
std::string_view to_string(OptimizerKind o);
Family family_from_string(std::string_view s);  // ValidationError when unknown
Embedding embedding_from_string(std::string_view s);
OptimizerKind optimizer_from_string(std::string_view s);

struct ModelSpec {
  Family family = Family::kLinearBaseline;
  int hidden_size = 512;
  int num_classes = 2;
  int recurrent_layers = 2;
  int conv_weight_layers = 15;
  // Empty selects the family default: recurrent uses pretrained_static when
  // embeddings_path is set and learned otherwise.
  std::optional<Embedding> embedding;
  std::optional<std::string> backbone_id;
  // Word-vector file for pretrained_static ("token v1 ... vd" per line).
  std::optional<std::string> embeddings_path;
  // Width of learned word embeddings.
  int embedding_dim = 300;

  bool operator==(const ModelSpec&) const = default;
};

// Throws ValidationError on an unusable spec.
void validate(const ModelSpec& spec);
Embedding effective_embedding(const ModelSpec& spec);

struct TrainingConfig {
  int epochs = 1;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdaptiveMoment;
  int batch_size = 32;
  int max_seq_len = 128;  // tokens
  int grad_accum_steps = 1;
  std::uint64_t seed = 0;
  // Stop after this many epochs without a lower training loss; 0 disables.
  int patience = 0;
  // Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;

  bool operator==(const TrainingConfig&) const = default;
};

void validate(const TrainingConfig& config);

nlohmann::ordered_json to_json(const ModelSpec& spec);
nlohmann::ordered_json to_json(const TrainingConfig& config);
// Missing fields take their defaults; unknown fields are rejected.
ModelSpec spec_from_json(const nlohmann::json& j);
TrainingConfig config_from_json(const nlohmann::json& j);

class Classifier;

// Immutable trained model. Copies share the same parameters.
struct ModelHandle {
  std::string model_id;
  ModelSpec spec;
  std::vector<TrainingConfig> config_history;
  std::string weights_digest;  // SHA-256 hex
  std::shared_ptr<const Classifier> model;

  bool valid() const { return model != nullptr; }
  // Sequence limit applied at prediction time: the latest config's value.
  int max_seq_len() const;
};

struct TrainingReport {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
  int epochs_run = 0;
  bool stopped_early = false;
};

struct FitOptions {
  std::string model_id;  // generated when empty
  TrainingReport* report = nullptr;
};

// A freshly initialized, untrained model.
ModelHandle initialize(const ModelSpec& spec, std::uint64_t seed, const std::string& model_id = "");

// Throws ValidationError when train is empty or single-class, or when the
// spec or config is invalid (including an unknown backbone).
ModelHandle fit(const ModelSpec& spec, std::span<const corpus::LabeledExample> train,
                const TrainingConfig& config, const FitOptions& options = {});

// Continues from the handle's parameters in a copy; the input stays usable.
// With epochs=0 the data checks are skipped and the digest is unchanged.
ModelHandle fine_tune(const ModelHandle& handle, std::span<const corpus::LabeledExample> train,
                      const TrainingConfig& config, const FitOptions& options = {});

struct Score {
  double p_normative = 0.5;
  double p_non_normative = 0.5;
  Label label = Label::kNormative;
  bool truncated = false;  // input exceeded max_seq_len tokens
  int tokens = 0;          // tokens actually used
};

// Empty or blank text is a ValidationError.
Score score(const ModelHandle& handle, std::string_view text);
double predict_proba(const ModelHandle& handle, std::string_view text);
Label predict(const ModelHandle& handle, std::string_view text);

// Normative iff p >= 0.5, so an exact tie is normative.
inline Label label_from_probability(double p_normative) {
  return p_normative >= 0.5 ? Label::kNormative : Label::kNonNormative;
}

// Written atomically. load_model throws CorruptModelError on truncation,
// malformed headers or a digest mismatch.
void save_model(const ModelHandle& handle, const std::string& path);
ModelHandle load_model(const std::string& path);

// Digest recomputed from the live parameters.
std::string compute_digest(const ModelHandle& handle);

}  // namespace normprior::modelzoo
