#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "normprior/corpus.hpp"
#include "normprior/metrics.hpp"
#include "normprior/modelzoo.hpp"
#include "normprior/surrogate.hpp"

namespace normprior::experiments {

enum class Protocol { kInDomain, kZeroShot, kFineTuned };
std::string_view to_string(Protocol p);
Protocol protocol_from_string(std::string_view s);

// Where a corpus comes from and how it is ingested. Exactly one of path and
// surrogate is set. Pair files are exploded; lexicon and exclusions are
// applied before explosion.
struct CorpusRef {
  struct Surrogate {
    int pairs = 600;
    std::uint64_t seed = 0;
    corpus::SurrogateDomain domain = corpus::SurrogateDomain::kEveryday;
    bool operator==(const Surrogate&) const = default;
  };
  std::optional<std::string> path;
  std::optional<Surrogate> surrogate;
  std::optional<std::string> lexicon;
  std::optional<std::string> exclusions;
  // Source tag for exploded pairs; defaults to gg for pair files and
  // surrogate for generated corpora. Example files keep their own tags.
  std::optional<corpus::Source> source;

  bool operator==(const CorpusRef&) const = default;
};

// Accepts a plain path, "surrogate:<domain>:<pairs>:<seed>", or an object
// {path|surrogate, lexicon, exclusions, source}.
CorpusRef corpus_ref_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const CorpusRef& r);

struct IngestResult {
  std::vector<corpus::LabeledExample> examples;
  corpus::DatasetManifest manifest;
};

// Relative paths resolve against base_dir.
IngestResult ingest(const CorpusRef& ref, const std::filesystem::path& base_dir = {});

// One row of the model matrix. A row either trains from spec/training or,
// for transfer protocols, starts from a saved artifact (model_path).
struct ModelEntry {
  std::string name;
  modelzoo::ModelSpec spec;
  modelzoo::TrainingConfig training;
  std::optional<modelzoo::TrainingConfig> fine_tune;  // overrides the experiment's
  std::optional<std::string> model_path;

  bool operator==(const ModelEntry&) const = default;
};

enum class EvalSubset { kFull, kTestSplit };

struct ExperimentConfig {
  std::string name;
  Protocol protocol = Protocol::kInDomain;
  CorpusRef train_corpus;
  std::optional<CorpusRef> eval_corpus;
  std::vector<ModelEntry> model_matrix;
  std::optional<modelzoo::TrainingConfig> fine_tune_config;
  double split_fraction = 0.5;
  std::uint64_t seed = 0;
  // zero_shot only: the whole eval corpus, or the test side of the split a
  // fine_tuned run with the same seed would use.
  EvalSubset eval_subset = EvalSubset::kFull;
  metrics::Averaging averaging = metrics::Averaging::kPositiveClass;
  int jobs = 1;  // rows evaluated in parallel

  bool operator==(const ExperimentConfig&) const = default;
};

// Throws ValidationError when the protocol invariants do not hold.
void validate(const ExperimentConfig& c);

// Relative corpus, model, embedding and backbone paths are resolved against
// base_dir, so the result is independent of the working directory.
// Model entries may name a preset instead of spelling out their training
// configs: {"family": ..., "preset": "paper-gg"} takes the preset's config
// for that family, and "fine_tune_preset" does the same for fine_tune.
ExperimentConfig experiment_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::string& path);
nlohmann::ordered_json to_json(const ExperimentConfig& c);

struct ResultRow {
  std::string model_name;
  std::optional<metrics::EvalReport> report;  // empty on failure
  std::string error;
  std::string model_id;
  std::string digest_before;  // at evaluation start
  std::string digest_after;
  std::size_t eval_examples = 0;

  bool ok() const { return report.has_value(); }
};

struct ResultsTable {
  std::vector<ResultRow> rows;
  nlohmann::ordered_json provenance;
};

// Throws ValidationError on a protocol mismatch or unusable corpora. Failing
// rows become error rows.
ResultsTable run_in_domain(const ExperimentConfig& c);

// Source handles, one per matrix row, may be supplied to skip source
// training. A parameter change during zero-shot evaluation throws
// ContractViolation.
ResultsTable run_transfer(const ExperimentConfig& c,
                          std::span<const modelzoo::ModelHandle> sources = {});

// Dispatches on the protocol.
ResultsTable run_experiment(const ExperimentConfig& c);

// Trains (or loads) one source handle per matrix row on the train corpus,
// as run_transfer would.
std::vector<modelzoo::ModelHandle> train_sources(const ExperimentConfig& c);

enum class TableFormat { kCsv, kMarkdown };
TableFormat table_format_from_string(std::string_view s);

// Columns Model, Test acc, F1, Precision, Recall, MCC with 3 decimals, rows
// in matrix order; failed rows read "error" in every metric column.
std::string emit_table(const ResultsTable& results, TableFormat format);

// Writes <stem>.csv, <stem>.md and <stem>.provenance.json into dir.
void write_results(const ResultsTable& results, const std::filesystem::path& dir,
                   const std::string& stem);

// Training presets shipped in the presets directory.
struct PresetEntry {
  std::string name;
  modelzoo::Family family;
  modelzoo::TrainingConfig training;
};
struct Preset {
  std::string name;
  std::vector<PresetEntry> entries;

  // First entry for the family; ValidationError when absent.
  const PresetEntry& for_family(modelzoo::Family f) const;
};

// NORMPRIOR_PRESET_DIR when set, otherwise the build-time default.
std::filesystem::path preset_dir();
// A name resolves to <preset_dir>/<name>.json; anything with a '/' or a
// ".json" suffix is read as a path.
Preset load_preset(const std::string& name_or_path);
Preset preset_from_json(const nlohmann::json& j);

}  // namespace normprior::experiments
