#include "normprior/modelzoo.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "families.hpp"
#include "normprior/error.hpp"
#include "normprior/modelzoo/classifier.hpp"
#include "normprior/modelzoo/container.hpp"
#include "normprior/nn/optim.hpp"
#include "normprior/text.hpp"

namespace normprior::modelzoo {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kModelMagic = "NORMPRIOR-MODEL";
constexpr int kModelVersion = 1;
constexpr int kDefaultSeqLen = 128;

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N], const char* what) {
  for (const auto& [e, name] : table) {
    if (name == s) return e;
  }
  throw ValidationError(std::string("unknown ") + what + ": " + std::string(s));
}

template <typename E, std::size_t N>
std::string_view enum_name(E e, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [v, name] : table) {
    if (v == e) return name;
  }
  return "?";
}

constexpr std::pair<Family, std::string_view> kFamilies[] = {
    {Family::kLinearBaseline, "linear_baseline"},
    {Family::kRecurrent, "recurrent"},
    {Family::kPyramidConv, "pyramid_conv"},
    {Family::kTransformerFinetune, "transformer_finetune"}};
constexpr std::pair<Embedding, std::string_view> kEmbeddings[] = {
    {Embedding::kPretrainedStatic, "pretrained_static"},
    {Embedding::kLearned, "learned"},
    {Embedding::kRegion, "region"},
    {Embedding::kContextual, "contextual"}};
constexpr std::pair<OptimizerKind, std::string_view> kOptimizers[] = {
    {OptimizerKind::kAdaptiveMoment, "adaptive_moment"}, {OptimizerKind::kPlainSgd, "plain_sgd"}};

void reject_unknown_fields(const json& j, std::initializer_list<std::string_view> known,
                           const char* what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || k == key;
    if (!ok) throw ValidationError(std::string(what) + ": unknown field '" + key + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const char* what) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string(what) + ": field '" + key + "' has the wrong type");
  }
}

void check_training_data(std::span<const corpus::LabeledExample> train) {
  if (train.empty()) throw ValidationError("training set is empty");
  bool seen[2] = {false, false};
  for (const auto& e : train) seen[label_index(e.label)] = true;
  if (!seen[0] || !seen[1]) throw ValidationError("training set must contain both classes");
}

// Flush denormals to zero while training. Near-zero losses otherwise drive
// gradients into the denormal range, which is dramatically slower on x86.
class DenormalGuard {
 public:
#if defined(__SSE__)
  DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~DenormalGuard() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

void train(Classifier& model, std::span<const corpus::LabeledExample> data,
           const TrainingConfig& cfg, TrainingReport* report) {
  if (report) *report = {};
  if (cfg.epochs == 0) return;
  DenormalGuard guard;
  std::vector<Encoded> enc;
  std::vector<int> targets;
  enc.reserve(data.size());
  for (const auto& e : data) {
    enc.push_back(model.encode(e.text, cfg.max_seq_len));
    targets.push_back(label_index(e.label));
  }
  std::unique_ptr<nn::Optimizer> opt;
  if (cfg.optimizer == OptimizerKind::kAdaptiveMoment) {
    opt = std::make_unique<nn::Adam>(static_cast<float>(cfg.learning_rate));
  } else {
    opt = std::make_unique<nn::Sgd>(static_cast<float>(cfg.learning_rate));
  }
  auto& params = model.params();
  nn::Gradients grads(params);
  Rng order_rng(cfg.seed ^ 0x6f72646572ULL);
  std::vector<std::size_t> order(data.size());
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const int accum = cfg.grad_accum_steps;

  auto apply = [&](int batches_in_step) {
    if (batches_in_step != accum) grads.scale(static_cast<float>(accum) / batches_in_step);
    if (cfg.max_grad_norm > 0) {
      const double norm = std::sqrt(grads.squared_norm());
      if (norm > cfg.max_grad_norm) grads.scale(static_cast<float>(cfg.max_grad_norm / norm));
    }
    opt->step(params, grads);
    grads.clear();
  };

  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    double total = 0;
    int pending = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const float weight = 1.0f / static_cast<float>((end - start) * static_cast<std::size_t>(accum));
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t k = order[i];
        nn::Graph g(params);
        nn::Var loss = nn::cross_entropy(model.logits(g, enc[k]), std::span(&targets[k], 1));
        total += loss.value()(0, 0);
        g.backward(loss, grads, weight);
      }
      if (++pending == accum) {
        apply(pending);
        pending = 0;
      }
    }
    if (pending > 0) apply(pending);
    const double mean = total / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw ValidationError("training diverged (non-finite loss)");
    if (report) {
      report->epoch_loss.push_back(mean);
      report->epochs_run = epoch + 1;
    }
    if (mean < best - 1e-9) {
      best = mean;
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      if (report) report->stopped_early = true;
      break;
    }
  }
}

std::string default_id(Family f, const std::string& digest) {
  return std::string(to_string(f)) + "-" + digest.substr(0, 12);
}

}  // namespace

std::string_view to_string(Family f) { return enum_name(f, kFamilies); }
std::string_view to_string(Embedding e) { return enum_name(e, kEmbeddings); }
std::string_view to_string(OptimizerKind o) { return enum_name(o, kOptimizers); }
Family family_from_string(std::string_view s) { return parse_enum(s, kFamilies, "model family"); }
Embedding embedding_from_string(std::string_view s) { return parse_enum(s, kEmbeddings, "embedding"); }
OptimizerKind optimizer_from_string(std::string_view s) {
  return parse_enum(s, kOptimizers, "optimizer");
}

Embedding effective_embedding(const ModelSpec& spec) {
  if (spec.embedding && spec.family != Family::kLinearBaseline) return *spec.embedding;
  switch (spec.family) {
    case Family::kRecurrent:
      return spec.embeddings_path ? Embedding::kPretrainedStatic : Embedding::kLearned;
    case Family::kPyramidConv:
      return Embedding::kRegion;
    case Family::kTransformerFinetune:
      return Embedding::kContextual;
    case Family::kLinearBaseline:
      break;
  }
  return Embedding::kLearned;
}

void validate(const ModelSpec& spec) {
  if (spec.num_classes != 2) throw ValidationError("num_classes must be 2");
  if (spec.hidden_size <= 0) throw ValidationError("hidden_size must be positive");
  const Embedding emb = effective_embedding(spec);
  switch (spec.family) {
    case Family::kLinearBaseline:
      break;
    case Family::kRecurrent:
      if (spec.recurrent_layers < 1) throw ValidationError("recurrent_layers must be at least 1");
      if (emb != Embedding::kPretrainedStatic && emb != Embedding::kLearned) {
        throw ValidationError("recurrent models take pretrained_static or learned embeddings");
      }
      if (emb == Embedding::kPretrainedStatic && !spec.embeddings_path) {
        throw ValidationError("pretrained_static embeddings need embeddings_path");
      }
      if (emb == Embedding::kLearned && spec.embedding_dim < 1) {
        throw ValidationError("embedding_dim must be positive");
      }
      break;
    case Family::kPyramidConv:
      if (spec.conv_weight_layers < 3 || spec.conv_weight_layers % 2 == 0) {
        throw ValidationError("conv_weight_layers must be odd and at least 3");
      }
      if (emb != Embedding::kRegion) throw ValidationError("pyramid_conv models take region embeddings");
      break;
    case Family::kTransformerFinetune:
      if (emb != Embedding::kContextual) {
        throw ValidationError("transformer_finetune models take contextual embeddings");
      }
      if (spec.backbone_id && *spec.backbone_id != "compact-encoder" &&
          spec.backbone_id->rfind("file:", 0) != 0) {
        throw ValidationError("unknown backbone_id: " + *spec.backbone_id);
      }
      break;
  }
}

void validate(const TrainingConfig& c) {
  if (c.epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(c.learning_rate > 0) || !std::isfinite(c.learning_rate)) {
    throw ValidationError("learning_rate must be positive");
  }
  if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (c.max_seq_len < 1) throw ValidationError("max_seq_len must be >= 1");
  if (c.grad_accum_steps < 1) throw ValidationError("grad_accum_steps must be >= 1");
  if (c.patience < 0) throw ValidationError("patience must be >= 0");
  if (!(c.max_grad_norm >= 0) || !std::isfinite(c.max_grad_norm)) {
    throw ValidationError("max_grad_norm must be >= 0");
  }
}

ordered_json to_json(const ModelSpec& s) {
  ordered_json j;
  j["family"] = to_string(s.family);
  j["hidden_size"] = s.hidden_size;
  j["num_classes"] = s.num_classes;
  j["recurrent_layers"] = s.recurrent_layers;
  j["conv_weight_layers"] = s.conv_weight_layers;
  j["embedding"] = s.embedding ? ordered_json(to_string(*s.embedding)) : ordered_json(nullptr);
  j["backbone_id"] = s.backbone_id ? ordered_json(*s.backbone_id) : ordered_json(nullptr);
  j["embeddings_path"] = s.embeddings_path ? ordered_json(*s.embeddings_path) : ordered_json(nullptr);
  j["embedding_dim"] = s.embedding_dim;
  return j;
}

ordered_json to_json(const TrainingConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"optimizer", to_string(c.optimizer)},
          {"batch_size", c.batch_size},
          {"max_seq_len", c.max_seq_len},
          {"grad_accum_steps", c.grad_accum_steps},
          {"seed", c.seed},
          {"patience", c.patience},
          {"max_grad_norm", c.max_grad_norm}};
}

ModelSpec spec_from_json(const json& j) {
  constexpr const char* what = "model spec";
  reject_unknown_fields(j,
                        {"family", "hidden_size", "num_classes", "recurrent_layers",
                         "conv_weight_layers", "embedding", "backbone_id", "embeddings_path",
                         "embedding_dim"},
                        what);
  ModelSpec s;
  std::string family;
  read_field(j, "family", family, what);
  if (family.empty()) throw ValidationError("model spec: missing 'family'");
  s.family = family_from_string(family);
  read_field(j, "hidden_size", s.hidden_size, what);
  read_field(j, "num_classes", s.num_classes, what);
  read_field(j, "recurrent_layers", s.recurrent_layers, what);
  read_field(j, "conv_weight_layers", s.conv_weight_layers, what);
  read_field(j, "embedding_dim", s.embedding_dim, what);
  std::string emb;
  read_field(j, "embedding", emb, what);
  if (!emb.empty()) s.embedding = embedding_from_string(emb);
  std::string backbone;
  read_field(j, "backbone_id", backbone, what);
  if (!backbone.empty()) s.backbone_id = backbone;
  std::string path;
  read_field(j, "embeddings_path", path, what);
  if (!path.empty()) s.embeddings_path = path;
  return s;
}

TrainingConfig config_from_json(const json& j) {
  constexpr const char* what = "training config";
  reject_unknown_fields(j,
                        {"epochs", "learning_rate", "optimizer", "batch_size", "max_seq_len",
                         "grad_accum_steps", "seed", "patience", "max_grad_norm"},
                        what);
  TrainingConfig c;
  read_field(j, "epochs", c.epochs, what);
  read_field(j, "learning_rate", c.learning_rate, what);
  std::string opt;
  read_field(j, "optimizer", opt, what);
  if (!opt.empty()) c.optimizer = optimizer_from_string(opt);
  read_field(j, "batch_size", c.batch_size, what);
  read_field(j, "max_seq_len", c.max_seq_len, what);
  read_field(j, "grad_accum_steps", c.grad_accum_steps, what);
  read_field(j, "seed", c.seed, what);
  read_field(j, "patience", c.patience, what);
  read_field(j, "max_grad_norm", c.max_grad_norm, what);
  return c;
}

int ModelHandle::max_seq_len() const {
  return config_history.empty() ? kDefaultSeqLen : config_history.back().max_seq_len;
}

std::unique_ptr<Classifier> make_classifier(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  switch (spec.family) {
    case Family::kLinearBaseline:
      return detail::build_linear(spec, nullptr, seed);
    case Family::kRecurrent:
      return detail::build_recurrent(spec, nullptr, seed);
    case Family::kPyramidConv:
      return detail::build_pyramid(spec, nullptr, seed);
    case Family::kTransformerFinetune:
      return detail::build_transformer(spec, nullptr, seed);
  }
  throw ContractViolation("unhandled model family");
}

std::unique_ptr<Classifier> restore_classifier(const ModelSpec& spec, const ordered_json& state,
                                               nn::ParameterStore params) {
  std::unique_ptr<Classifier> model;
  try {
    switch (spec.family) {
      case Family::kLinearBaseline:
        model = detail::build_linear(spec, &state, 0);
        break;
      case Family::kRecurrent:
        model = detail::build_recurrent(spec, &state, 0);
        break;
      case Family::kPyramidConv:
        model = detail::build_pyramid(spec, &state, 0);
        break;
      case Family::kTransformerFinetune:
        model = detail::build_transformer(spec, &state, 0);
        break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptModelError(std::string("malformed model state: ") + e.what());
  }
  auto& expected = model->params();
  if (expected.size() != params.size()) throw CorruptModelError("parameter count does not match the family");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& a = expected[i];
    const auto& b = params[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.trainable != b.trainable || a.sparse != b.sparse) {
      throw CorruptModelError("unexpected parameter " + b.name);
    }
  }
  expected = std::move(params);
  return model;
}

double normative_probability(const nn::Matrix& logits) {
  const double diff = static_cast<double>(logits(0, 1)) - static_cast<double>(logits(0, 0));
  return 1.0 / (1.0 + std::exp(diff));
}

ModelHandle initialize(const ModelSpec& spec, std::uint64_t seed, const std::string& model_id) {
  std::shared_ptr<const Classifier> model = make_classifier(spec, seed);
  ModelHandle h;
  h.spec = spec;
  h.weights_digest = model->params().digest();
  h.model_id = model_id.empty() ? default_id(spec.family, h.weights_digest) : model_id;
  h.model = std::move(model);
  return h;
}

ModelHandle fit(const ModelSpec& spec, std::span<const corpus::LabeledExample> data,
                const TrainingConfig& config, const FitOptions& options) {
  validate(spec);
  validate(config);
  check_training_data(data);
  auto model = make_classifier(spec, config.seed);
  train(*model, data, config, options.report);
  ModelHandle h;
  h.spec = spec;
  h.config_history = {config};
  h.weights_digest = model->params().digest();
  h.model_id = options.model_id.empty() ? default_id(spec.family, h.weights_digest) : options.model_id;
  h.model = std::move(model);
  return h;
}

ModelHandle fine_tune(const ModelHandle& parent, std::span<const corpus::LabeledExample> data,
                      const TrainingConfig& config, const FitOptions& options) {
  if (!parent.valid()) throw ValidationError("fine_tune needs a trained model");
  validate(config);
  if (config.epochs > 0) check_training_data(data);
  auto model = parent.model->clone();
  train(*model, data, config, options.report);
  ModelHandle h;
  h.spec = parent.spec;
  h.config_history = parent.config_history;
  h.config_history.push_back(config);
  h.weights_digest = model->params().digest();
  h.model_id = options.model_id.empty() ? parent.model_id + "+ft" : options.model_id;
  h.model = std::move(model);
  return h;
}

Score score(const ModelHandle& handle, std::string_view content) {
  if (!handle.valid()) throw ValidationError("no model loaded");
  if (text::trim(content).empty()) throw ValidationError("text is empty");
  const Classifier& model = *handle.model;
  const Encoded enc = model.encode(content, handle.max_seq_len());
  nn::Graph g(model.params(), false);
  const double p = normative_probability(model.logits(g, enc).value());
  Score s;
  s.p_normative = p;
  s.p_non_normative = 1.0 - p;
  s.label = label_from_probability(p);
  s.truncated = enc.truncated;
  s.tokens = enc.tokens;
  return s;
}

double predict_proba(const ModelHandle& handle, std::string_view text) {
  return score(handle, text).p_normative;
}

Label predict(const ModelHandle& handle, std::string_view text) { return score(handle, text).label; }

std::string compute_digest(const ModelHandle& handle) {
  if (!handle.valid()) throw ValidationError("no model loaded");
  return handle.model->params().digest();
}

void save_model(const ModelHandle& handle, const std::string& path) {
  if (!handle.valid()) throw ValidationError("no model to save");
  if (compute_digest(handle) != handle.weights_digest) {
    throw ContractViolation("model parameters changed after the handle was issued");
  }
  ordered_json history = ordered_json::array();
  for (const auto& c : handle.config_history) history.push_back(to_json(c));
  ordered_json header = {{"model_id", handle.model_id},
                         {"spec", to_json(handle.spec)},
                         {"config_history", std::move(history)},
                         {"family_state", handle.model->state()}};
  write_container(path, kModelMagic, kModelVersion, std::move(header), handle.model->params());
}

ModelHandle load_model(const std::string& path) {
  Container c = read_container(path, kModelMagic, kModelVersion);
  ModelHandle h;
  try {
    h.model_id = c.header.at("model_id").get<std::string>();
    h.spec = spec_from_json(json::parse(c.header.at("spec").dump()));
    for (const auto& cfg : c.header.at("config_history")) {
      h.config_history.push_back(config_from_json(json::parse(cfg.dump())));
    }
    h.model = restore_classifier(h.spec, c.header.at("family_state"), std::move(c.params));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptModelError(path + ": malformed model header: " + e.what());
  } catch (const CorruptModelError&) {
    throw;
  } catch (const ValidationError& e) {
    throw CorruptModelError(path + ": " + e.what());
  }
  h.weights_digest = c.digest;
  return h;
}

}  // namespace normprior::modelzoo
