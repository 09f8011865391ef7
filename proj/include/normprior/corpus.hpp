#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "normprior/labels.hpp"

namespace normprior::corpus {

enum class Source { kGoofusGallant, kPlotto, kSciFi, kSurrogate, kUser };
enum class Split { kTrain, kTest, kUnassigned };

std::string_view to_string(Source s);
std::string_view to_string(Split s);
bool parse_source(std::string_view s, Source& out);
bool parse_split(std::string_view s, Split& out);

// One situation rendered twice: normatively and non-normatively.
struct PanelPair {
  std::string id;
  std::string positive_text;
  std::string negative_text;
  std::optional<int> year;

  bool operator==(const PanelPair&) const = default;
};

struct LabeledExample {
  std::string id;
  std::string text;
  Label label = Label::kNormative;
  Source source = Source::kUser;
  Split split = Split::kUnassigned;

  bool operator==(const LabeledExample&) const = default;
};

enum class Pronoun { kHe, kShe, kThey };

// Character name -> replacement pronoun. Names are matched case-sensitively
// as whole words; "Name's" becomes the possessive form.
struct CharacterLexicon {
  std::map<std::string, Pronoun> entries;
};

struct DatasetManifest {
  std::string corpus_name;
  long original = 0;
  long selected = 0;
  std::optional<long> consensus;
  double split_fraction = 0.5;
  long long seed = 0;
};

struct SplitResult {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

// Throws ValidationError on a pair that breaks the PanelPair invariants.
void validate(const PanelPair& pair);

// Two examples per pair, ids "<pair id>+" (normative) and "<pair id>-".
// Throws ValidationError naming a duplicated pair id.
std::vector<LabeledExample> explode_pairs(const std::vector<PanelPair>& pairs,
                                          Source source = Source::kGoofusGallant);

std::string anonymize(std::string_view text, const CharacterLexicon& lexicon);

// |train| = round-half-up(fraction * N), stratified by label, reproducible for
// a fixed seed. Input order is preserved within each side.
SplitResult split_corpus(const std::vector<LabeledExample>& examples,
                         double fraction, unsigned long long seed);

// JSONL persistence. Loading validates every record and reports the first
// offender with its line number and field.
std::vector<LabeledExample> load_examples(const std::string& path);
void save_examples(const std::vector<LabeledExample>& examples,
                   const std::string& path);
std::string serialize_examples(const std::vector<LabeledExample>& examples);
std::vector<LabeledExample> parse_examples(std::string_view jsonl,
                                           const std::string& origin);

std::vector<PanelPair> load_pairs(const std::string& path);
void save_pairs(const std::vector<PanelPair>& pairs, const std::string& path);
std::string serialize_pairs(const std::vector<PanelPair>& pairs);
std::vector<PanelPair> parse_pairs(std::string_view jsonl,
                                   const std::string& origin);

enum class FileKind { kExamples, kPairs, kEmpty };
// Inspects the first record's keys.
FileKind detect_kind(const std::string& path);

CharacterLexicon load_lexicon(const std::string& path);
CharacterLexicon parse_lexicon(std::string_view contents,
                               const std::string& origin);

// Plain-text id list, one per line, '#' comments.
std::set<std::string> load_exclusions(const std::string& path);
std::vector<LabeledExample> apply_exclusions(std::vector<LabeledExample> examples,
                                             const std::set<std::string>& ids);
std::vector<PanelPair> apply_exclusions(std::vector<PanelPair> pairs,
                                        const std::set<std::string>& ids);

// SHA-256 of the canonical JSONL serialization.
std::string corpus_digest(const std::vector<LabeledExample>& examples);

void validate(const DatasetManifest& m);
std::string to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(std::string_view json);

}  // namespace normprior::corpus
