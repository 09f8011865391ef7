#include "normprior/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "normprior/error.hpp"
#include "normprior/text.hpp"

#ifndef NORMPRIOR_DEFAULT_PRESET_DIR
#define NORMPRIOR_DEFAULT_PRESET_DIR "presets"
#endif

namespace normprior::experiments {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using modelzoo::ModelHandle;
using modelzoo::TrainingConfig;

namespace {

json plain(const ordered_json& o) { return json::parse(o.dump()); }

std::string resolve(const std::string& p, const fs::path& base) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

std::string_view domain_name(corpus::SurrogateDomain d) {
  return d == corpus::SurrogateDomain::kAdventure ? "adventure" : "everyday";
}

corpus::SurrogateDomain domain_from(std::string_view s) {
  if (s == "everyday") return corpus::SurrogateDomain::kEveryday;
  if (s == "adventure") return corpus::SurrogateDomain::kAdventure;
  throw ValidationError("unknown surrogate domain: " + std::string(s));
}

void only_fields(const json& j, std::initializer_list<std::string_view> known, const std::string& what) {
  if (!j.is_object()) throw ValidationError(what + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || k == key;
    if (!ok) throw ValidationError(what + ": unknown field '" + key + "'");
  }
}

template <typename T>
T field(const json& j, const char* key, T fallback, const std::string& what) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(what + ": field '" + key + "' has the wrong type");
  }
}

std::optional<std::string> opt_string(const json& j, const char* key, const std::string& what) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return field<std::string>(j, key, "", what);
}

modelzoo::ModelSpec resolve_paths(modelzoo::ModelSpec s, const fs::path& base) {
  if (s.embeddings_path) s.embeddings_path = resolve(*s.embeddings_path, base);
  if (s.backbone_id && s.backbone_id->rfind("file:", 0) == 0) {
    s.backbone_id = "file:" + resolve(s.backbone_id->substr(5), base);
  }
  return s;
}

// Preset config with any explicit fields layered on top.
TrainingConfig merged_config(const json& entry, const char* preset_key, const char* config_key,
                             modelzoo::Family family, const std::string& what) {
  json merged = json::object();
  if (auto name = opt_string(entry, preset_key, what)) {
    merged = plain(modelzoo::to_json(load_preset(*name).for_family(family).training));
  }
  if (entry.contains(config_key) && !entry[config_key].is_null()) {
    if (!entry[config_key].is_object()) {
      throw ValidationError(what + ": '" + config_key + "' must be an object");
    }
    merged.update(entry[config_key]);
  }
  return modelzoo::config_from_json(merged);
}

ModelEntry entry_from_json(const json& j, const fs::path& base, std::size_t index) {
  const std::string what = "model_matrix[" + std::to_string(index) + "]";
  only_fields(j, {"name", "spec", "training", "preset", "fine_tune", "fine_tune_preset", "model_path"},
              what);
  ModelEntry e;
  e.name = field<std::string>(j, "name", "", what);
  if (j.contains("spec")) e.spec = modelzoo::spec_from_json(j["spec"]);
  e.spec = resolve_paths(e.spec, base);
  e.training = merged_config(j, "preset", "training", e.spec.family, what);
  if (j.contains("fine_tune") || j.contains("fine_tune_preset")) {
    e.fine_tune = merged_config(j, "fine_tune_preset", "fine_tune", e.spec.family, what);
  }
  if (auto p = opt_string(j, "model_path", what)) e.model_path = resolve(*p, base);
  if (e.name.empty()) e.name = std::string(modelzoo::to_string(e.spec.family));
  return e;
}

// --- evaluation ------------------------------------------------------------

metrics::EvalReport evaluate(const ModelHandle& h, const std::vector<corpus::LabeledExample>& test,
                             metrics::Averaging averaging) {
  std::vector<metrics::Prediction> preds;
  preds.reserve(test.size());
  for (const auto& e : test) preds.push_back({modelzoo::predict(h, e.text), e.label});
  return metrics::compute_metrics(metrics::confusion(preds), averaging);
}

struct Sides {
  std::vector<corpus::LabeledExample> train, test;
};

// Uses assigned splits when every example has one, otherwise splits.
Sides sides_of(const std::vector<corpus::LabeledExample>& xs, double fraction, std::uint64_t seed,
               const std::string& what) {
  std::size_t assigned = 0;
  for (const auto& e : xs) assigned += e.split != corpus::Split::kUnassigned;
  if (assigned == 0) {
    auto r = corpus::split_corpus(xs, fraction, seed);
    return {std::move(r.train), std::move(r.test)};
  }
  if (assigned != xs.size()) {
    throw ValidationError(what + ": some examples have a split and some do not");
  }
  Sides s;
  for (const auto& e : xs) (e.split == corpus::Split::kTrain ? s.train : s.test).push_back(e);
  if (s.train.empty() || s.test.empty()) {
    throw ValidationError(what + ": pre-assigned splits leave one side empty");
  }
  return s;
}

ordered_json corpus_block(const CorpusRef& ref, const std::vector<corpus::LabeledExample>& xs) {
  return {{"ref", to_json(ref)}, {"digest", corpus::corpus_digest(xs)}, {"examples", xs.size()}};
}

ordered_json row_block(const ResultRow& r) {
  ordered_json o = {{"model", r.model_name},
                    {"status", r.ok() ? "ok" : "error"},
                    {"model_id", r.model_id},
                    {"weights_digest_before", r.digest_before},
                    {"weights_digest_after", r.digest_after},
                    {"eval_examples", r.eval_examples}};
  if (!r.ok()) o["error"] = r.error;
  return o;
}

// Runs fn(i) for every row on up to `jobs` threads. Row failures become
// error rows; ContractViolation aborts the whole run.
template <typename Fn>
std::vector<ResultRow> run_rows(const ExperimentConfig& c, Fn fn) {
  const std::size_t n = c.model_matrix.size();
  std::vector<ResultRow> rows(n);
  std::mutex mu;
  std::exception_ptr fatal;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n || fatal) return;
        i = next++;
      }
      ResultRow row;
      row.model_name = c.model_matrix[i].name;
      try {
        fn(i, row);
      } catch (const ContractViolation&) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        return;
      } catch (const std::exception& e) {
        row.report.reset();
        row.error = e.what();
      }
      std::lock_guard lock(mu);
      rows[i] = std::move(row);
    }
  };
  const int jobs = std::max(1, std::min<int>(c.jobs, static_cast<int>(n)));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);
  return rows;
}

ordered_json base_provenance(const ExperimentConfig& c) {
  return {{"experiment", to_json(c)}, {"protocol", to_string(c.protocol)}};
}

ModelHandle source_handle(const ModelEntry& e, const std::vector<corpus::LabeledExample>& train) {
  if (e.model_path) return modelzoo::load_model(*e.model_path);
  return modelzoo::fit(e.spec, train, e.training);
}

const TrainingConfig& fine_tune_for(const ExperimentConfig& c, const ModelEntry& e) {
  return e.fine_tune ? *e.fine_tune : *c.fine_tune_config;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s = buf;
  if (s == "-0.000") s = "0.000";
  return s;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string md_cell(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '|') out += '\\';
    out += ch == '\n' ? ' ' : ch;
  }
  return out;
}

}  // namespace

// --- names -----------------------------------------------------------------

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::kInDomain: return "in_domain";
    case Protocol::kZeroShot: return "zero_shot";
    case Protocol::kFineTuned: return "fine_tuned";
  }
  return "?";
}

Protocol protocol_from_string(std::string_view s) {
  if (s == "in_domain") return Protocol::kInDomain;
  if (s == "zero_shot") return Protocol::kZeroShot;
  if (s == "fine_tuned") return Protocol::kFineTuned;
  throw ValidationError("unknown protocol: " + std::string(s));
}

TableFormat table_format_from_string(std::string_view s) {
  if (s == "csv") return TableFormat::kCsv;
  if (s == "markdown" || s == "md") return TableFormat::kMarkdown;
  throw ValidationError("unknown table format: " + std::string(s));
}

// --- corpora ---------------------------------------------------------------

CorpusRef corpus_ref_from_json(const json& j) {
  CorpusRef r;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s.rfind("surrogate:", 0) != 0) {
      r.path = s;
      return r;
    }
    // surrogate:<domain>:<pairs>:<seed>
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() != 4) throw ValidationError("bad surrogate corpus reference: " + s);
    CorpusRef::Surrogate g;
    g.domain = domain_from(parts[1]);
    try {
      g.pairs = std::stoi(parts[2]);
      g.seed = std::stoull(parts[3]);
    } catch (const std::exception&) {
      throw ValidationError("bad surrogate corpus reference: " + s);
    }
    r.surrogate = g;
    return r;
  }
  const std::string what = "corpus reference";
  only_fields(j, {"path", "surrogate", "lexicon", "exclusions", "source"}, what);
  r.path = opt_string(j, "path", what);
  if (j.contains("surrogate")) {
    const json& g = j["surrogate"];
    only_fields(g, {"pairs", "seed", "domain"}, "surrogate");
    CorpusRef::Surrogate s;
    s.pairs = field<int>(g, "pairs", s.pairs, "surrogate");
    s.seed = field<std::uint64_t>(g, "seed", s.seed, "surrogate");
    s.domain = domain_from(field<std::string>(g, "domain", "everyday", "surrogate"));
    r.surrogate = s;
  }
  r.lexicon = opt_string(j, "lexicon", what);
  r.exclusions = opt_string(j, "exclusions", what);
  if (auto src = opt_string(j, "source", what)) {
    corpus::Source s;
    if (!corpus::parse_source(*src, s)) throw ValidationError("unknown corpus source: " + *src);
    r.source = s;
  }
  if (r.path.has_value() == r.surrogate.has_value()) {
    throw ValidationError("corpus reference needs exactly one of path and surrogate");
  }
  return r;
}

ordered_json to_json(const CorpusRef& r) {
  ordered_json o = ordered_json::object();
  if (r.path) o["path"] = *r.path;
  if (r.surrogate) {
    o["surrogate"] = {{"pairs", r.surrogate->pairs},
                      {"seed", r.surrogate->seed},
                      {"domain", domain_name(r.surrogate->domain)}};
  }
  if (r.lexicon) o["lexicon"] = *r.lexicon;
  if (r.exclusions) o["exclusions"] = *r.exclusions;
  if (r.source) o["source"] = corpus::to_string(*r.source);
  return o;
}

IngestResult ingest(const CorpusRef& ref, const fs::path& base_dir) {
  if (ref.path.has_value() == ref.surrogate.has_value()) {
    throw ValidationError("corpus reference needs exactly one of path and surrogate");
  }
  std::optional<corpus::CharacterLexicon> lexicon;
  if (ref.lexicon) lexicon = corpus::load_lexicon(resolve(*ref.lexicon, base_dir));
  std::set<std::string> excluded;
  if (ref.exclusions) excluded = corpus::load_exclusions(resolve(*ref.exclusions, base_dir));

  IngestResult out;
  std::vector<corpus::PanelPair> pairs;
  bool have_pairs = false;
  corpus::Source pair_source = corpus::Source::kGoofusGallant;
  if (ref.surrogate) {
    pairs = corpus::generate_surrogate(ref.surrogate->pairs, ref.surrogate->seed,
                                       ref.surrogate->domain);
    have_pairs = true;
    pair_source = corpus::Source::kSurrogate;
    out.manifest.corpus_name = "surrogate-" + std::string(domain_name(ref.surrogate->domain));
  } else {
    const std::string path = resolve(*ref.path, base_dir);
    if (!fs::exists(path)) throw ValidationError("corpus file not found: " + path);
    out.manifest.corpus_name = fs::path(path).stem().string();
    switch (corpus::detect_kind(path)) {
      case corpus::FileKind::kPairs:
        pairs = corpus::load_pairs(path);
        have_pairs = true;
        break;
      case corpus::FileKind::kExamples:
        out.examples = corpus::load_examples(path);
        break;
      case corpus::FileKind::kEmpty:
        break;
    }
  }
  if (ref.source) pair_source = *ref.source;

  if (have_pairs) {
    out.manifest.original = static_cast<long>(2 * pairs.size());
    pairs = corpus::apply_exclusions(std::move(pairs), excluded);
    if (lexicon) {
      for (auto& p : pairs) {
        p.positive_text = corpus::anonymize(p.positive_text, *lexicon);
        p.negative_text = corpus::anonymize(p.negative_text, *lexicon);
      }
    }
    out.examples = corpus::explode_pairs(pairs, pair_source);
  } else {
    out.manifest.original = static_cast<long>(out.examples.size());
    out.examples = corpus::apply_exclusions(std::move(out.examples), excluded);
    if (lexicon) {
      for (auto& e : out.examples) e.text = corpus::anonymize(e.text, *lexicon);
    }
  }
  out.manifest.selected = static_cast<long>(out.examples.size());
  return out;
}

// --- configs ---------------------------------------------------------------

void validate(const ExperimentConfig& c) {
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0)) {
    throw ValidationError("split_fraction must lie strictly between 0 and 1");
  }
  if (c.jobs < 1) throw ValidationError("jobs must be at least 1");
  const bool tuned = c.protocol == Protocol::kFineTuned;
  if (tuned != c.fine_tune_config.has_value()) {
    bool per_row = tuned && !c.model_matrix.empty();
    for (const auto& e : c.model_matrix) per_row = per_row && e.fine_tune.has_value();
    if (!per_row) {
      throw ValidationError(tuned ? "fine_tuned protocol requires fine_tune_config"
                                  : "fine_tune_config is only allowed with the fine_tuned protocol");
    }
  }
  if (c.protocol != Protocol::kInDomain && !c.eval_corpus) {
    throw ValidationError(std::string(to_string(c.protocol)) + " protocol requires eval_corpus");
  }
  if (c.protocol == Protocol::kZeroShot && c.eval_corpus && *c.eval_corpus == c.train_corpus) {
    throw ValidationError("zero_shot requires eval_corpus to differ from train_corpus");
  }
  if (c.eval_subset != EvalSubset::kFull && c.protocol != Protocol::kZeroShot) {
    throw ValidationError("eval_subset applies to the zero_shot protocol only");
  }
  if (c.fine_tune_config) modelzoo::validate(*c.fine_tune_config);
  std::set<std::string> names;
  for (const auto& e : c.model_matrix) {
    if (!names.insert(e.name).second) throw ValidationError("duplicate model name: " + e.name);
    modelzoo::validate(e.spec);
    modelzoo::validate(e.training);
    if (e.fine_tune) {
      if (!tuned) throw ValidationError(e.name + ": fine_tune given outside the fine_tuned protocol");
      modelzoo::validate(*e.fine_tune);
    }
    if (e.model_path && c.protocol == Protocol::kInDomain) {
      throw ValidationError(e.name + ": model_path is only used by transfer protocols");
    }
  }
}

ExperimentConfig experiment_from_json(const json& j, const fs::path& base_dir) {
  const std::string what = "experiment";
  only_fields(j,
              {"name", "protocol", "train_corpus", "eval_corpus", "model_matrix", "fine_tune_config",
               "split_fraction", "seed", "eval_subset", "averaging", "jobs"},
              what);
  ExperimentConfig c;
  c.name = field<std::string>(j, "name", "experiment", what);
  c.protocol = protocol_from_string(field<std::string>(j, "protocol", "in_domain", what));
  if (!j.contains("train_corpus")) throw ValidationError("experiment: train_corpus is required");
  auto resolve_ref = [&](CorpusRef r) {
    if (r.path) r.path = resolve(*r.path, base_dir);
    if (r.lexicon) r.lexicon = resolve(*r.lexicon, base_dir);
    if (r.exclusions) r.exclusions = resolve(*r.exclusions, base_dir);
    return r;
  };
  c.train_corpus = resolve_ref(corpus_ref_from_json(j["train_corpus"]));
  if (j.contains("eval_corpus") && !j["eval_corpus"].is_null()) {
    c.eval_corpus = resolve_ref(corpus_ref_from_json(j["eval_corpus"]));
  }
  if (j.contains("model_matrix")) {
    if (!j["model_matrix"].is_array()) throw ValidationError("experiment: model_matrix must be a list");
    for (std::size_t i = 0; i < j["model_matrix"].size(); ++i) {
      c.model_matrix.push_back(entry_from_json(j["model_matrix"][i], base_dir, i));
    }
  }
  if (j.contains("fine_tune_config") && !j["fine_tune_config"].is_null()) {
    c.fine_tune_config = modelzoo::config_from_json(j["fine_tune_config"]);
  }
  c.split_fraction = field<double>(j, "split_fraction", c.split_fraction, what);
  c.seed = field<std::uint64_t>(j, "seed", c.seed, what);
  const auto subset = field<std::string>(j, "eval_subset", "full", what);
  if (subset == "full") {
    c.eval_subset = EvalSubset::kFull;
  } else if (subset == "test_split") {
    c.eval_subset = EvalSubset::kTestSplit;
  } else {
    throw ValidationError("unknown eval_subset: " + subset);
  }
  c.averaging = metrics::averaging_from_string(field<std::string>(j, "averaging", "positive_class", what));
  c.jobs = field<int>(j, "jobs", c.jobs, what);
  validate(c);
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open experiment config: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return experiment_from_json(j, fs::absolute(path).parent_path());
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json o = {{"name", c.name},
                    {"protocol", to_string(c.protocol)},
                    {"train_corpus", to_json(c.train_corpus)}};
  if (c.eval_corpus) o["eval_corpus"] = to_json(*c.eval_corpus);
  ordered_json rows = ordered_json::array();
  for (const auto& e : c.model_matrix) {
    ordered_json r = {{"name", e.name},
                      {"spec", modelzoo::to_json(e.spec)},
                      {"training", modelzoo::to_json(e.training)}};
    if (e.fine_tune) r["fine_tune"] = modelzoo::to_json(*e.fine_tune);
    if (e.model_path) r["model_path"] = *e.model_path;
    rows.push_back(std::move(r));
  }
  o["model_matrix"] = std::move(rows);
  if (c.fine_tune_config) o["fine_tune_config"] = modelzoo::to_json(*c.fine_tune_config);
  o["split_fraction"] = c.split_fraction;
  o["seed"] = c.seed;
  o["eval_subset"] = c.eval_subset == EvalSubset::kFull ? "full" : "test_split";
  o["averaging"] = metrics::to_string(c.averaging);
  o["jobs"] = c.jobs;
  return o;
}

// --- runs ------------------------------------------------------------------

ResultsTable run_in_domain(const ExperimentConfig& c) {
  validate(c);
  if (c.protocol != Protocol::kInDomain) {
    throw ValidationError("run_in_domain needs the in_domain protocol");
  }
  ResultsTable t;
  t.provenance = base_provenance(c);
  const auto data = ingest(c.train_corpus).examples;
  t.provenance["corpora"] = {{"train", corpus_block(c.train_corpus, data)}};
  if (c.model_matrix.empty()) {
    t.provenance["rows"] = ordered_json::array();
    return t;
  }
  Sides s;
  if (c.eval_corpus) {
    s.train = data;
    s.test = ingest(*c.eval_corpus).examples;
  } else {
    s = sides_of(data, c.split_fraction, c.seed, "train_corpus");
  }
  if (c.eval_corpus) t.provenance["corpora"]["eval"] = corpus_block(*c.eval_corpus, s.test);
  t.provenance["split"] = {{"train", s.train.size()},
                           {"test", s.test.size()},
                           {"train_digest", corpus::corpus_digest(s.train)},
                           {"test_digest", corpus::corpus_digest(s.test)}};

  t.rows = run_rows(c, [&](std::size_t i, ResultRow& row) {
    const ModelEntry& e = c.model_matrix[i];
    const ModelHandle h = modelzoo::fit(e.spec, s.train, e.training);
    row.model_id = h.model_id;
    row.digest_before = h.weights_digest;
    row.report = evaluate(h, s.test, c.averaging);
    row.digest_after = modelzoo::compute_digest(h);
    row.eval_examples = s.test.size();
  });
  ordered_json rows = ordered_json::array();
  for (const auto& r : t.rows) rows.push_back(row_block(r));
  t.provenance["rows"] = std::move(rows);
  return t;
}

std::vector<ModelHandle> train_sources(const ExperimentConfig& c) {
  validate(c);
  std::vector<corpus::LabeledExample> train;
  bool need_data = false;
  for (const auto& e : c.model_matrix) need_data = need_data || !e.model_path;
  if (need_data) {
    train = sides_of(ingest(c.train_corpus).examples, c.split_fraction, c.seed, "train_corpus").train;
  }
  std::vector<ModelHandle> out;
  for (const auto& e : c.model_matrix) out.push_back(source_handle(e, train));
  return out;
}

ResultsTable run_transfer(const ExperimentConfig& c, std::span<const ModelHandle> sources) {
  validate(c);
  if (c.protocol == Protocol::kInDomain) {
    throw ValidationError("run_transfer needs the zero_shot or fine_tuned protocol");
  }
  if (!sources.empty() && sources.size() != c.model_matrix.size()) {
    throw ValidationError("expected one source model per model_matrix row");
  }
  ResultsTable t;
  t.provenance = base_provenance(c);

  bool need_source_data = false;
  if (sources.empty()) {
    for (const auto& e : c.model_matrix) need_source_data = need_source_data || !e.model_path;
  }
  std::vector<corpus::LabeledExample> source_all, source_train;
  if (need_source_data) {
    source_all = ingest(c.train_corpus).examples;
    source_train = sides_of(source_all, c.split_fraction, c.seed, "train_corpus").train;
    t.provenance["corpora"]["train"] = corpus_block(c.train_corpus, source_all);
    t.provenance["source_train_digest"] = corpus::corpus_digest(source_train);
  } else {
    t.provenance["corpora"]["train"] = {{"ref", to_json(c.train_corpus)}, {"digest", nullptr}};
  }

  const auto target = ingest(*c.eval_corpus).examples;
  t.provenance["corpora"]["eval"] = corpus_block(*c.eval_corpus, target);
  if (need_source_data && corpus::corpus_digest(source_all) == corpus::corpus_digest(target) &&
      c.protocol == Protocol::kZeroShot) {
    throw ValidationError("zero_shot requires eval_corpus to differ from train_corpus");
  }

  Sides tgt;
  if (c.protocol == Protocol::kFineTuned || c.eval_subset == EvalSubset::kTestSplit) {
    tgt = sides_of(target, c.split_fraction, c.seed, "eval_corpus");
    t.provenance["split"] = {{"train", tgt.train.size()},
                             {"test", tgt.test.size()},
                             {"fraction", c.split_fraction},
                             {"seed", c.seed},
                             {"test_digest", corpus::corpus_digest(tgt.test)}};
  } else {
    tgt.test = target;
  }
  t.provenance["eval_subset"] = c.protocol == Protocol::kFineTuned
                                    ? "test_split"
                                    : (c.eval_subset == EvalSubset::kFull ? "full" : "test_split");

  t.rows = run_rows(c, [&](std::size_t i, ResultRow& row) {
    const ModelEntry& e = c.model_matrix[i];
    const ModelHandle src = sources.empty() ? source_handle(e, source_train) : sources[i];
    if (c.protocol == Protocol::kZeroShot) {
      row.model_id = src.model_id;
      row.digest_before = modelzoo::compute_digest(src);
      if (row.digest_before != src.weights_digest) {
        throw ContractViolation(e.name + ": source weights do not match their recorded digest");
      }
      row.report = evaluate(src, tgt.test, c.averaging);
      row.digest_after = modelzoo::compute_digest(src);
      if (row.digest_after != row.digest_before) {
        throw ContractViolation(e.name + ": weights changed during zero-shot evaluation");
      }
    } else {
      row.digest_before = src.weights_digest;
      const ModelHandle tuned = modelzoo::fine_tune(src, tgt.train, fine_tune_for(c, e));
      row.model_id = tuned.model_id;
      row.digest_after = tuned.weights_digest;
      row.report = evaluate(tuned, tgt.test, c.averaging);
    }
    row.eval_examples = tgt.test.size();
  });
  ordered_json rows = ordered_json::array();
  for (const auto& r : t.rows) rows.push_back(row_block(r));
  t.provenance["rows"] = std::move(rows);
  return t;
}

ResultsTable run_experiment(const ExperimentConfig& c) {
  return c.protocol == Protocol::kInDomain ? run_in_domain(c) : run_transfer(c);
}

// --- output ----------------------------------------------------------------

std::string emit_table(const ResultsTable& results, TableFormat format) {
  static const char* kCols[] = {"Model", "Test acc", "F1", "Precision", "Recall", "MCC"};
  std::vector<std::vector<std::string>> lines;
  lines.emplace_back(std::begin(kCols), std::end(kCols));
  for (const auto& r : results.rows) {
    std::vector<std::string> cells{r.model_name};
    if (r.ok()) {
      const auto& m = *r.report;
      for (double v : {m.accuracy, m.f1, m.precision, m.recall, m.mcc}) cells.push_back(fmt3(v));
    } else {
      cells.insert(cells.end(), 5, "error");
    }
    lines.push_back(std::move(cells));
  }
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& cells = lines[i];
    if (format == TableFormat::kCsv) {
      for (std::size_t k = 0; k < cells.size(); ++k) out += (k ? "," : "") + csv_cell(cells[k]);
      out += "\n";
    } else {
      out += "|";
      for (const auto& cell : cells) out += " " + md_cell(cell) + " |";
      out += "\n";
      if (i == 0) out += "|---|---|---|---|---|---|\n";
    }
  }
  return out;
}

void write_results(const ResultsTable& results, const fs::path& dir, const std::string& stem) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create " + dir.string() + ": " + ec.message());
  text::write_file_atomic((dir / (stem + ".csv")).string(), emit_table(results, TableFormat::kCsv));
  text::write_file_atomic((dir / (stem + ".md")).string(), emit_table(results, TableFormat::kMarkdown));
  text::write_file_atomic((dir / (stem + ".provenance.json")).string(),
                          results.provenance.dump(2) + "\n");
}

// --- presets ---------------------------------------------------------------

const PresetEntry& Preset::for_family(modelzoo::Family f) const {
  for (const auto& e : entries) {
    if (e.family == f) return e;
  }
  throw ValidationError("preset '" + name + "' has no entry for " +
                        std::string(modelzoo::to_string(f)));
}

fs::path preset_dir() {
  if (const char* env = std::getenv("NORMPRIOR_PRESET_DIR"); env && *env) return env;
  return NORMPRIOR_DEFAULT_PRESET_DIR;
}

Preset preset_from_json(const json& j) {
  only_fields(j, {"name", "entries"}, "preset");
  Preset p;
  p.name = field<std::string>(j, "name", "", "preset");
  if (!j.contains("entries") || !j["entries"].is_array() || j["entries"].empty()) {
    throw ValidationError("preset '" + p.name + "' needs a non-empty entries list");
  }
  for (const auto& e : j["entries"]) {
    only_fields(e, {"name", "family", "training"}, "preset entry");
    PresetEntry pe;
    pe.name = field<std::string>(e, "name", "", "preset entry");
    pe.family = modelzoo::family_from_string(field<std::string>(e, "family", "", "preset entry"));
    pe.training = modelzoo::config_from_json(e.value("training", json::object()));
    modelzoo::validate(pe.training);
    p.entries.push_back(std::move(pe));
  }
  return p;
}

Preset load_preset(const std::string& name_or_path) {
  const bool is_path = name_or_path.find('/') != std::string::npos ||
                       (name_or_path.size() > 5 &&
                        name_or_path.compare(name_or_path.size() - 5, 5, ".json") == 0);
  const fs::path path = is_path ? fs::path(name_or_path) : preset_dir() / (name_or_path + ".json");
  std::ifstream in(path);
  if (!in) throw ValidationError("unknown preset '" + name_or_path + "' (looked for " + path.string() + ")");
  try {
    return preset_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace normprior::experiments
