#pragma once

#include <map>
#include <optional>
#include <string>

#include "httplib.h"
#include "normprior/annotation.hpp"
#include "normprior/modelzoo.hpp"

namespace normprior::service {

// Loaded models keyed by model_id.
using ModelRegistry = std::map<std::string, modelzoo::ModelHandle>;

// Every file in dir that starts with the model magic. Duplicate ids and
// unreadable artifacts are ValidationErrors; an empty registry is allowed.
ModelRegistry load_model_dir(const std::string& dir);

struct ScoreResponse {
  double p_normative = 0.5;
  Label label = Label::kNormative;
  std::string model_id;
  bool truncated = false;
};

nlohmann::ordered_json to_json(const ScoreResponse& r);

// HTTP front end over immutable model handles and, optionally, an
// annotation campaign. Handlers hold no per-request state, so one Service
// may back any number of server threads.
class Service {
 public:
  // default_model serves requests without a "model" field; when empty and
  // exactly one model is loaded, that one is used.
  Service(ModelRegistry models, std::optional<std::string> default_model = std::nullopt,
          annotation::AnnotationStore* store = nullptr);

  // Adds /score, /score/batch and /healthz when models are loaded, and the
  // /api/* routes when a store was given.
  void mount(httplib::Server& server) const;

  // Throws ValidationError for unknown ids and empty text.
  ScoreResponse score(const std::string& text, const std::optional<std::string>& model) const;

  // model_id -> digest recomputed from the live parameters.
  std::map<std::string, std::string> digests() const;
  // Throws ContractViolation when any live digest differs from the recorded one.
  void verify_digests() const;

  const ModelRegistry& models() const { return models_; }

 private:
  const modelzoo::ModelHandle& pick(const std::optional<std::string>& model) const;

  ModelRegistry models_;
  std::optional<std::string> default_model_;
  annotation::AnnotationStore* store_;
};

// Thrown by Service::score for an unknown model id (HTTP 404).
class UnknownModel : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace normprior::service
