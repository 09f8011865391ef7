#include "normprior/service.hpp"

#include <filesystem>
#include <fstream>

#include "normprior/error.hpp"
#include "normprior/text.hpp"

namespace normprior::service {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kMagic = "NORMPRIOR-MODEL ";
constexpr const char* kJson = "application/json";

bool looks_like_model(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string head(kMagic.size(), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  return in && head == kMagic;
}

void reply(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump() + "\n", kJson);
}

void fail(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, ordered_json{{"error", message}});
}

// Parses a JSON request body; replies 400 and returns nullopt when malformed.
std::optional<json> body_of(const httplib::Request& req, httplib::Response& res) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error&) {
    fail(res, 400, "request body is not valid JSON");
    return std::nullopt;
  }
}

std::optional<std::string> model_field(const json& j) {
  if (!j.is_object() || !j.contains("model") || j["model"].is_null()) return std::nullopt;
  if (!j["model"].is_string()) throw ValidationError("'model' must be a string");
  return j["model"].get<std::string>();
}

ordered_json item_json(const annotation::AnnotationItem& it) {
  ordered_json o = {{"item_id", it.item_id}, {"text", it.text}};
  o["context_note"] = it.context_note ? ordered_json(*it.context_note) : ordered_json(nullptr);
  o["status"] = annotation::to_string(it.status);
  o["votes"] = it.votes;
  o["instructions"] = annotation::annotator_instructions();
  return o;
}

ordered_json progress_json(const annotation::Progress& p) {
  return {{"open", p.open},
          {"consensus", p.consensus},
          {"discarded", p.discarded},
          {"total_votes", p.total_votes}};
}

}  // namespace

ModelRegistry load_model_dir(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw ValidationError("model directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && looks_like_model(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  ModelRegistry out;
  for (const auto& f : files) {
    auto h = modelzoo::load_model(f.string());
    const std::string id = h.model_id;
    if (!out.emplace(id, std::move(h)).second) {
      throw ValidationError("model id '" + id + "' appears twice in " + dir);
    }
  }
  return out;
}

ordered_json to_json(const ScoreResponse& r) {
  return {{"p_normative", r.p_normative},
          {"label", to_string(r.label)},
          {"model_id", r.model_id},
          {"truncated", r.truncated}};
}

Service::Service(ModelRegistry models, std::optional<std::string> default_model,
                 annotation::AnnotationStore* store)
    : models_(std::move(models)), default_model_(std::move(default_model)), store_(store) {
  if (default_model_ && !models_.count(*default_model_)) {
    throw ValidationError("default model '" + *default_model_ + "' is not loaded");
  }
}

const modelzoo::ModelHandle& Service::pick(const std::optional<std::string>& model) const {
  if (model) {
    auto it = models_.find(*model);
    if (it == models_.end()) throw UnknownModel("unknown model: " + *model);
    return it->second;
  }
  if (default_model_) return models_.at(*default_model_);
  if (models_.size() == 1) return models_.begin()->second;
  throw ValidationError(models_.empty() ? "no models are loaded"
                                        : "several models are loaded; name one with 'model'");
}

ScoreResponse Service::score(const std::string& text, const std::optional<std::string>& model) const {
  const auto& h = pick(model);
  const modelzoo::Score s = modelzoo::score(h, text);
  return {s.p_normative, s.label, h.model_id, s.truncated};
}

std::map<std::string, std::string> Service::digests() const {
  std::map<std::string, std::string> out;
  for (const auto& [id, h] : models_) out[id] = modelzoo::compute_digest(h);
  return out;
}

void Service::verify_digests() const {
  for (const auto& [id, digest] : digests()) {
    if (digest != models_.at(id).weights_digest) {
      throw ContractViolation("model '" + id + "' weights changed while serving");
    }
  }
}

void Service::mount(httplib::Server& server) const {
  // Small JSON replies otherwise wait out delayed ACKs.
  server.set_tcp_nodelay(true);
  // Shared error mapping for the scoring routes.
  auto guarded = [](auto fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const UnknownModel& e) {
        fail(res, 404, e.what());
      } catch (const ValidationError& e) {
        fail(res, 400, e.what());
      } catch (const std::exception& e) {
        fail(res, 500, e.what());
      }
    };
  };

  server.Get("/healthz", guarded([this](const httplib::Request&, httplib::Response& res) {
    ordered_json models = ordered_json::array();
    for (const auto& [id, h] : models_) {
      models.push_back({{"model_id", id}, {"weights_digest", h.weights_digest}});
    }
    reply(res, 200, {{"status", "ok"}, {"models", models}});
  }));

  server.Post("/score", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto j = body_of(req, res);
    if (!j) return;
    if (!j->is_object() || !j->contains("text") || !(*j)["text"].is_string()) {
      throw ValidationError("body needs a string 'text'");
    }
    reply(res, 200, to_json(score((*j)["text"].get<std::string>(), model_field(*j))));
  }));

  server.Post("/score/batch", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto j = body_of(req, res);
    if (!j) return;
    const json* texts = &*j;
    std::optional<std::string> model;
    if (j->is_object()) {
      if (!j->contains("texts")) throw ValidationError("body needs a 'texts' array");
      texts = &(*j)["texts"];
      model = model_field(*j);
    }
    if (!texts->is_array()) throw ValidationError("'texts' must be an array of strings");
    const auto& h = pick(model);
    ordered_json results = ordered_json::array();
    for (std::size_t i = 0; i < texts->size(); ++i) {
      const json& t = (*texts)[i];
      if (!t.is_string()) throw ValidationError("texts[" + std::to_string(i) + "] is not a string");
      try {
        ordered_json r = to_json(score(t.get<std::string>(), h.model_id));
        r.erase("model_id");
        results.push_back(std::move(r));
      } catch (const UnknownModel&) {
        throw;
      } catch (const ValidationError& e) {
        throw ValidationError("texts[" + std::to_string(i) + "]: " + e.what());
      }
    }
    reply(res, 200, {{"model_id", h.model_id}, {"results", results}});
  }));

  if (!store_) return;
  annotation::AnnotationStore* store = store_;

  server.Get("/api/next", [store](const httplib::Request& req, httplib::Response& res) {
    const std::string who = req.get_param_value("annotator");
    if (text::trim(who).empty()) return fail(res, 400, "query parameter 'annotator' is required");
    auto item = store->next_item(who);
    if (!item) {
      res.status = 204;
      return;
    }
    reply(res, 200, item_json(*item));
  });

  server.Post("/api/vote", [store](const httplib::Request& req, httplib::Response& res) {
    auto j = body_of(req, res);
    if (!j) return;
    std::string item_id, annotator, vote;
    try {
      item_id = j->at("item_id").get<std::string>();
      annotator = j->at("annotator_id").get<std::string>();
      vote = j->at("vote").get<std::string>();
    } catch (const json::exception&) {
      return fail(res, 400, "body needs string fields item_id, annotator_id and vote");
    }
    Label label;
    if (!parse_label(vote, label)) return fail(res, 400, "vote must be normative or non_normative");
    if (text::trim(annotator).empty()) return fail(res, 400, "annotator_id is empty");
    try {
      const auto ack = store->submit_vote(item_id, annotator, label);
      ordered_json body = {{"item_id", item_id},
                           {"status", annotation::to_string(ack.item_status)},
                           {"votes", ack.votes}};
      body["label"] = ack.label ? ordered_json(to_string(*ack.label)) : ordered_json(nullptr);
      reply(res, 201, body);
    } catch (const annotation::VoteRejected& e) {
      fail(res, e.reason() == annotation::VoteRejected::Reason::kUnknownItem ? 404 : 409, e.what());
    } catch (const ValidationError& e) {
      fail(res, 400, e.what());
    }
  });

  server.Get("/api/progress", [store](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, progress_json(store->progress()));
  });
}

}  // namespace normprior::service
