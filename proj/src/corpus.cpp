#include "normprior/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "normprior/digest.hpp"
#include "normprior/error.hpp"
#include "normprior/rng.hpp"
#include "normprior/text.hpp"

namespace normprior::corpus {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::array<std::pair<Source, std::string_view>, 5> kSources{{
    {Source::kGoofusGallant, "gg"},
    {Source::kPlotto, "plotto"},
    {Source::kSciFi, "scifi"},
    {Source::kSurrogate, "surrogate"},
    {Source::kUser, "user"},
}};

// ---------------------------------------------------------------------------
// anonymization helpers

bool is_word_byte(unsigned char c) {
  return c >= 0x80 || std::isalnum(c) != 0 || c == '_';
}

std::string_view subject_form(Pronoun p) {
  switch (p) {
    case Pronoun::kHe: return "he";
    case Pronoun::kShe: return "she";
    case Pronoun::kThey: return "they";
  }
  return "they";
}

std::string_view possessive_form(Pronoun p) {
  switch (p) {
    case Pronoun::kHe: return "his";
    case Pronoun::kShe: return "her";
    case Pronoun::kThey: return "their";
  }
  return "their";
}

// Length of a possessive suffix ("'s" or U+2019 "s") at pos, or 0.
std::size_t possessive_suffix(std::string_view text, std::size_t pos) {
  static constexpr std::string_view kAscii = "'s";
  static constexpr std::string_view kCurly = "\xE2\x80\x99s";
  for (std::string_view suffix : {kAscii, kCurly}) {
    if (text.substr(pos, suffix.size()) == suffix) {
      const std::size_t end = pos + suffix.size();
      if (end == text.size() ||
          !is_word_byte(static_cast<unsigned char>(text[end]))) {
        return suffix.size();
      }
    }
  }
  return 0;
}

bool sentence_initial(std::string_view out) {
  std::size_t i = out.size();
  while (i > 0) {
    const auto c = static_cast<unsigned char>(out[i - 1]);
    if (std::isspace(c) || c == '"' || c == '(' || c == '\'') {
      --i;
      continue;
    }
    return c == '.' || c == '!' || c == '?';
  }
  return true;
}

// ---------------------------------------------------------------------------
// JSONL helpers

struct Line {
  std::size_t number;
  std::string_view body;
};

std::vector<Line> jsonl_lines(std::string_view contents) {
  std::vector<Line> lines;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    std::size_t end = contents.find('\n', pos);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view body = contents.substr(pos, end - pos);
    if (!body.empty() && body.back() == '\r') body.remove_suffix(1);
    ++number;
    if (!text::trim(body).empty()) lines.push_back({number, body});
    pos = end + 1;
  }
  return lines;
}

json parse_object(const Line& line, const std::string& origin) {
  json j;
  try {
    j = json::parse(line.body);
  } catch (const json::parse_error& e) {
    throw RecordError(origin, line.number, "<record>",
                      std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw RecordError(origin, line.number, "<record>", "expected a JSON object");
  }
  return j;
}

void check_fields(const json& j, std::initializer_list<const char*> allowed,
                  const Line& line, const std::string& origin) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* f : allowed) known = known || it.key() == f;
    if (!known) {
      throw RecordError(origin, line.number, it.key(), "unknown field");
    }
  }
}

std::string require_string(const json& j, const char* field, const Line& line,
                           const std::string& origin) {
  auto it = j.find(field);
  if (it == j.end()) {
    throw RecordError(origin, line.number, field, "missing");
  }
  if (!it->is_string()) {
    throw RecordError(origin, line.number, field, "expected a string");
  }
  return it->get<std::string>();
}

std::string dump_line(const ordered_json& j) {
  return j.dump(-1, ' ', false, ordered_json::error_handler_t::strict) + "\n";
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Source s) {
  for (const auto& [src, name] : kSources) {
    if (src == s) return name;
  }
  return "user";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

bool parse_source(std::string_view s, Source& out) {
  for (const auto& [src, name] : kSources) {
    if (name == s) {
      out = src;
      return true;
    }
  }
  return false;
}

bool parse_split(std::string_view s, Split& out) {
  for (Split sp : {Split::kTrain, Split::kTest, Split::kUnassigned}) {
    if (to_string(sp) == s) {
      out = sp;
      return true;
    }
  }
  return false;
}

void validate(const PanelPair& pair) {
  if (pair.id.empty()) throw ValidationError("panel pair with empty id");
  if (text::trim(pair.positive_text).empty()) {
    throw ValidationError("panel pair '" + pair.id + "': empty positive_text");
  }
  if (text::trim(pair.negative_text).empty()) {
    throw ValidationError("panel pair '" + pair.id + "': empty negative_text");
  }
  if (pair.positive_text == pair.negative_text) {
    throw ValidationError("panel pair '" + pair.id +
                          "': positive_text equals negative_text");
  }
}

std::vector<LabeledExample> explode_pairs(const std::vector<PanelPair>& pairs,
                                          Source source) {
  std::set<std::string> seen;
  std::vector<LabeledExample> out;
  out.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    validate(p);
    if (!seen.insert(p.id).second) {
      throw ValidationError("duplicate pair id: " + p.id);
    }
    out.push_back({p.id + "+", p.positive_text, Label::kNormative, source,
                   Split::kUnassigned});
    out.push_back({p.id + "-", p.negative_text, Label::kNonNormative, source,
                   Split::kUnassigned});
  }
  return out;
}

std::string anonymize(std::string_view text, const CharacterLexicon& lexicon) {
  // Longest names first so "Darth Sidious" wins over "Darth".
  std::vector<const std::pair<const std::string, Pronoun>*> names;
  for (const auto& e : lexicon.entries) names.push_back(&e);
  std::stable_sort(names.begin(), names.end(), [](auto* a, auto* b) {
    return a->first.size() > b->first.size();
  });

  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const bool at_boundary =
        i == 0 || !is_word_byte(static_cast<unsigned char>(text[i - 1]));
    bool replaced = false;
    if (at_boundary) {
      for (const auto* entry : names) {
        const std::string& name = entry->first;
        if (name.empty() || text.compare(i, name.size(), name) != 0) continue;
        const std::size_t end = i + name.size();
        const std::size_t poss = possessive_suffix(text, end);
        const bool whole_word =
            end == text.size() ||
            !is_word_byte(static_cast<unsigned char>(text[end]));
        if (poss == 0 && !whole_word) continue;

        std::string repl(poss > 0 ? possessive_form(entry->second)
                                  : subject_form(entry->second));
        if (sentence_initial(out)) {
          repl[0] = static_cast<char>(
              std::toupper(static_cast<unsigned char>(repl[0])));
        }
        out += repl;
        i = end + poss;
        replaced = true;
        break;
      }
    }
    if (!replaced) {
      out.push_back(text[i]);
      ++i;
    }
  }
  return out;
}

SplitResult split_corpus(const std::vector<LabeledExample>& examples,
                         double fraction, unsigned long long seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("split fraction must lie strictly between 0 and 1");
  }
  if (examples.size() < 2) {
    throw ValidationError("split needs at least 2 examples");
  }
  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].split != Split::kUnassigned) {
      throw ValidationError("example '" + examples[i].id +
                            "' already has a split assigned");
    }
    by_label[examples[i].label == Label::kNormative ? 0 : 1].push_back(i);
  }
  for (int l = 0; l < 2; ++l) {
    if (by_label[l].empty()) {
      throw ValidationError(
          std::string("cannot stratify: no ") +
          std::string(to_string(l == 0 ? Label::kNormative : Label::kNonNormative)) +
          " examples");
    }
  }

  const auto n = static_cast<double>(examples.size());
  const auto n_train = static_cast<std::size_t>(std::floor(fraction * n + 0.5));

  // Each label receives floor or ceil of its ideal share; leftover slots go
  // to the larger fractional remainder, normative first on ties.
  std::array<std::size_t, 2> take{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (int l = 0; l < 2; ++l) {
    const double ideal = fraction * static_cast<double>(by_label[l].size());
    take[l] = static_cast<std::size_t>(std::floor(ideal));
    remainder[l] = ideal - std::floor(ideal);
    assigned += take[l];
  }
  std::array<int, 2> order{0, 1};
  if (remainder[1] > remainder[0]) order = {1, 0};
  for (int k = 0; assigned < n_train; k = (k + 1) % 2) {
    const int l = order[k];
    if (take[l] < by_label[l].size()) {
      ++take[l];
      ++assigned;
    }
  }

  Rng rng(seed);
  std::vector<bool> in_train(examples.size(), false);
  for (int l = 0; l < 2; ++l) {
    std::vector<std::size_t> idx = by_label[l];
    rng.shuffle(idx);
    for (std::size_t k = 0; k < take[l]; ++k) in_train[idx[k]] = true;
  }

  SplitResult result;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    LabeledExample e = examples[i];
    e.split = in_train[i] ? Split::kTrain : Split::kTest;
    (in_train[i] ? result.train : result.test).push_back(std::move(e));
  }
  return result;
}

// ---------------------------------------------------------------------------
// persistence

std::string serialize_examples(const std::vector<LabeledExample>& examples) {
  std::string out;
  for (const auto& e : examples) {
    ordered_json j;
    j["id"] = e.id;
    j["text"] = e.text;
    j["label"] = to_string(e.label);
    j["source"] = to_string(e.source);
    j["split"] = to_string(e.split);
    out += dump_line(j);
  }
  return out;
}

std::vector<LabeledExample> parse_examples(std::string_view jsonl,
                                           const std::string& origin) {
  std::vector<LabeledExample> out;
  std::set<std::string> ids;
  for (const Line& line : jsonl_lines(jsonl)) {
    const json j = parse_object(line, origin);
    check_fields(j, {"id", "text", "label", "source", "split"}, line, origin);
    LabeledExample e;
    e.id = require_string(j, "id", line, origin);
    if (e.id.empty()) throw RecordError(origin, line.number, "id", "empty");
    if (!ids.insert(e.id).second) {
      throw RecordError(origin, line.number, "id", "duplicate id " + e.id);
    }
    e.text = require_string(j, "text", line, origin);
    if (text::trim(e.text).empty()) {
      throw RecordError(origin, line.number, "text", "empty");
    }
    const std::string label = require_string(j, "label", line, origin);
    if (!parse_label(label, e.label)) {
      throw RecordError(origin, line.number, "label",
                        "unknown label '" + label + "'");
    }
    const std::string source = require_string(j, "source", line, origin);
    if (!parse_source(source, e.source)) {
      throw RecordError(origin, line.number, "source",
                        "unknown source '" + source + "'");
    }
    const std::string split = require_string(j, "split", line, origin);
    if (!parse_split(split, e.split)) {
      throw RecordError(origin, line.number, "split",
                        "unknown split '" + split + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<LabeledExample> load_examples(const std::string& path) {
  return parse_examples(text::read_file(path), path);
}

void save_examples(const std::vector<LabeledExample>& examples,
                   const std::string& path) {
  text::write_file_atomic(path, serialize_examples(examples));
}

std::string serialize_pairs(const std::vector<PanelPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    ordered_json j;
    j["id"] = p.id;
    j["positive_text"] = p.positive_text;
    j["negative_text"] = p.negative_text;
    j["year"] = p.year ? ordered_json(*p.year) : ordered_json(nullptr);
    out += dump_line(j);
  }
  return out;
}

std::vector<PanelPair> parse_pairs(std::string_view jsonl,
                                   const std::string& origin) {
  std::vector<PanelPair> out;
  std::set<std::string> ids;
  for (const Line& line : jsonl_lines(jsonl)) {
    const json j = parse_object(line, origin);
    check_fields(j, {"id", "positive_text", "negative_text", "year"}, line,
                 origin);
    PanelPair p;
    p.id = require_string(j, "id", line, origin);
    if (!ids.insert(p.id).second) {
      throw RecordError(origin, line.number, "id", "duplicate id " + p.id);
    }
    p.positive_text = require_string(j, "positive_text", line, origin);
    p.negative_text = require_string(j, "negative_text", line, origin);
    if (auto it = j.find("year"); it != j.end() && !it->is_null()) {
      if (!it->is_number_integer()) {
        throw RecordError(origin, line.number, "year", "expected integer or null");
      }
      p.year = it->get<int>();
    }
    try {
      validate(p);
    } catch (const ValidationError& e) {
      throw RecordError(origin, line.number, "<record>", e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PanelPair> load_pairs(const std::string& path) {
  return parse_pairs(text::read_file(path), path);
}

void save_pairs(const std::vector<PanelPair>& pairs, const std::string& path) {
  text::write_file_atomic(path, serialize_pairs(pairs));
}

FileKind detect_kind(const std::string& path) {
  const std::string contents = text::read_file(path);
  const auto lines = jsonl_lines(contents);
  if (lines.empty()) return FileKind::kEmpty;
  const json j = parse_object(lines.front(), path);
  if (j.contains("positive_text") || j.contains("negative_text")) {
    return FileKind::kPairs;
  }
  return FileKind::kExamples;
}

CharacterLexicon parse_lexicon(std::string_view contents,
                               const std::string& origin) {
  static const std::set<std::string> kReserved = {"he",  "she", "they",
                                                  "his", "her", "their"};
  CharacterLexicon lex;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    std::size_t end = contents.find('\n', pos);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view line = contents.substr(pos, end - pos);
    pos = end + 1;
    ++number;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (text::trim(line).empty() || text::trim(line).front() == '#') continue;

    const std::size_t tab = line.find('\t');
    const std::string name(text::trim(line.substr(0, tab)));
    std::string pronoun = tab == std::string_view::npos
                              ? "they"
                              : std::string(text::trim(line.substr(tab + 1)));
    if (pronoun.empty()) pronoun = "they";
    if (name.empty()) throw RecordError(origin, number, "name", "empty");
    if (kReserved.count(text::to_lower_ascii(name)) != 0) {
      throw RecordError(origin, number, "name", "name collides with a pronoun");
    }
    Pronoun p;
    if (pronoun == "he") {
      p = Pronoun::kHe;
    } else if (pronoun == "she") {
      p = Pronoun::kShe;
    } else if (pronoun == "they") {
      p = Pronoun::kThey;
    } else {
      throw RecordError(origin, number, "pronoun",
                        "expected he, she or they, got '" + pronoun + "'");
    }
    lex.entries[name] = p;
  }
  return lex;
}

CharacterLexicon load_lexicon(const std::string& path) {
  return parse_lexicon(text::read_file(path), path);
}

std::set<std::string> load_exclusions(const std::string& path) {
  const std::string contents = text::read_file(path);
  std::set<std::string> ids;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    std::size_t end = contents.find('\n', pos);
    if (end == std::string::npos) end = contents.size();
    const auto line = text::trim(std::string_view(contents).substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    ids.emplace(line);
  }
  return ids;
}

std::vector<LabeledExample> apply_exclusions(std::vector<LabeledExample> examples,
                                             const std::set<std::string>& ids) {
  std::erase_if(examples, [&](const LabeledExample& e) { return ids.count(e.id) > 0; });
  return examples;
}

std::vector<PanelPair> apply_exclusions(std::vector<PanelPair> pairs,
                                        const std::set<std::string>& ids) {
  std::erase_if(pairs, [&](const PanelPair& p) { return ids.count(p.id) > 0; });
  return pairs;
}

std::string corpus_digest(const std::vector<LabeledExample>& examples) {
  return sha256_hex(serialize_examples(examples));
}

void validate(const DatasetManifest& m) {
  if (m.original < 0 || m.selected < 0 || (m.consensus && *m.consensus < 0)) {
    throw ValidationError("manifest counts must be non-negative");
  }
  if (m.selected > m.original ||
      (m.consensus && *m.consensus > m.selected)) {
    throw ValidationError("manifest counts must be non-increasing: original >= "
                          "selected >= consensus");
  }
  if (!(m.split_fraction > 0.0 && m.split_fraction < 1.0)) {
    throw ValidationError("manifest split_fraction must lie in (0, 1)");
  }
}

std::string to_json(const DatasetManifest& m) {
  validate(m);
  ordered_json j;
  j["corpus_name"] = m.corpus_name;
  j["counts"]["original"] = m.original;
  j["counts"]["selected"] = m.selected;
  j["counts"]["consensus"] =
      m.consensus ? ordered_json(*m.consensus) : ordered_json(nullptr);
  j["split_fraction"] = m.split_fraction;
  j["seed"] = m.seed;
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view s) {
  DatasetManifest m;
  try {
    const json j = json::parse(s);
    m.corpus_name = j.at("corpus_name").get<std::string>();
    m.original = j.at("counts").at("original").get<long>();
    m.selected = j.at("counts").at("selected").get<long>();
    const auto& c = j.at("counts").at("consensus");
    if (!c.is_null()) m.consensus = c.get<long>();
    m.split_fraction = j.at("split_fraction").get<double>();
    m.seed = j.at("seed").get<long long>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid manifest: ") + e.what());
  }
  validate(m);
  return m;
}

}  // namespace normprior::corpus
