#include "normprior/experiments.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "normprior/error.hpp"
#include "test_util.hpp"

namespace normprior::experiments {
namespace {

using corpus::LabeledExample;
using modelzoo::Family;
using modelzoo::ModelSpec;
using modelzoo::TrainingConfig;
using nlohmann::json;
using testing_util::TempDir;

class PresetEnv : public ::testing::Environment {
 public:
  void SetUp() override { setenv("NORMPRIOR_PRESET_DIR", NORMPRIOR_SOURCE_DIR "/presets", 1); }
};
const auto* const kEnv = ::testing::AddGlobalTestEnvironment(new PresetEnv);

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CorpusRef surrogate(int pairs, std::uint64_t seed,
                    corpus::SurrogateDomain d = corpus::SurrogateDomain::kEveryday) {
  CorpusRef r;
  r.surrogate = CorpusRef::Surrogate{pairs, seed, d};
  return r;
}

ModelEntry linear(const std::string& name = "Linear") {
  ModelEntry e;
  e.name = name;
  e.spec.family = Family::kLinearBaseline;
  e.training.epochs = 10;
  e.training.learning_rate = 0.05;
  return e;
}

ExperimentConfig in_domain(std::vector<ModelEntry> rows) {
  ExperimentConfig c;
  c.name = "gg";
  c.train_corpus = surrogate(600, 0);
  c.model_matrix = std::move(rows);
  return c;
}

ExperimentConfig transfer(Protocol p, std::vector<ModelEntry> rows) {
  ExperimentConfig c = in_domain(std::move(rows));
  c.protocol = p;
  c.eval_corpus = surrogate(200, 1, corpus::SurrogateDomain::kAdventure);
  return c;
}

metrics::EvalReport report_of(double acc, double f1, double p, double r, double mcc) {
  metrics::EvalReport m;
  m.accuracy = acc;
  m.f1 = f1;
  m.precision = p;
  m.recall = r;
  m.mcc = mcc;
  return m;
}

// --- tables ---------------------------------------------------------------

TEST(EmitTable, PaperRowText) {
  ResultsTable t;
  t.rows.push_back({"BERT-GG", report_of(0.908, 0.907, 0.931, 0.885, 0.818), "", "", "", "", 0});
  EXPECT_EQ(emit_table(t, TableFormat::kCsv),
            "Model,Test acc,F1,Precision,Recall,MCC\nBERT-GG,0.908,0.907,0.931,0.885,0.818\n");
  EXPECT_EQ(emit_table(t, TableFormat::kMarkdown),
            "| Model | Test acc | F1 | Precision | Recall | MCC |\n"
            "|---|---|---|---|---|---|\n"
            "| BERT-GG | 0.908 | 0.907 | 0.931 | 0.885 | 0.818 |\n");
}

TEST(EmitTable, RoundingAndSigns) {
  ResultsTable t;
  t.rows.push_back({"a", report_of(0.5, 2.0 / 3, 0.0005, 0.9995, -0.0004), "", "", "", "", 0});
  t.rows.push_back({"b", report_of(0.43, 0.38, 0.6, 0.279, -0.037), "", "", "", "", 0});
  const std::string csv = emit_table(t, TableFormat::kCsv);
  EXPECT_NE(csv.find("\na,0.500,0.667,0.001,1.000,0.000\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\nb,0.430,0.380,0.600,0.279,-0.037\n"), std::string::npos) << csv;
}

TEST(EmitTable, ErrorRowsAndEscaping) {
  ResultsTable t;
  t.rows.push_back({"Bi-LSTM, small", std::nullopt, "boom", "", "", "", 0});
  t.rows.push_back({"x|y", report_of(1, 1, 1, 1, 1), "", "", "", "", 0});
  EXPECT_EQ(emit_table(t, TableFormat::kCsv),
            "Model,Test acc,F1,Precision,Recall,MCC\n"
            "\"Bi-LSTM, small\",error,error,error,error,error\n"
            "x|y,1.000,1.000,1.000,1.000,1.000\n");
  const std::string md = emit_table(t, TableFormat::kMarkdown);
  EXPECT_NE(md.find("| x\\|y | 1.000 |"), std::string::npos);
}

TEST(EmitTable, EmptyAndDeterministic) {
  ResultsTable t;
  EXPECT_EQ(emit_table(t, TableFormat::kCsv), "Model,Test acc,F1,Precision,Recall,MCC\n");
  t.rows.push_back({"m", report_of(0.1234, 0.2, 0.3, 0.4, 0.5), "", "", "", "", 0});
  EXPECT_EQ(emit_table(t, TableFormat::kCsv), emit_table(t, TableFormat::kCsv));
  EXPECT_EQ(emit_table(t, TableFormat::kMarkdown), emit_table(t, TableFormat::kMarkdown));
}

TEST(EmitTable, FormatNames) {
  EXPECT_EQ(table_format_from_string("csv"), TableFormat::kCsv);
  EXPECT_EQ(table_format_from_string("markdown"), TableFormat::kMarkdown);
  EXPECT_THROW(table_format_from_string("latex"), ValidationError);
}

// --- presets ---------------------------------------------------------------

void expect_training(const Preset& p, const std::string& entry, Family f, int epochs, double lr) {
  const PresetEntry* found = nullptr;
  for (const auto& e : p.entries) {
    if (e.name == entry) found = &e;
  }
  ASSERT_NE(found, nullptr) << p.name << " lacks " << entry;
  EXPECT_EQ(found->family, f) << entry;
  EXPECT_EQ(found->training.epochs, epochs) << entry;
  EXPECT_EQ(found->training.learning_rate, lr) << entry;
  EXPECT_EQ(found->training.optimizer, modelzoo::OptimizerKind::kAdaptiveMoment) << entry;
  EXPECT_EQ(found->training.max_seq_len, 128) << entry;
  EXPECT_EQ(found->training.grad_accum_steps, 1) << entry;
}

TEST(Presets, InDomainConstants) {
  const Preset p = load_preset("paper-gg");
  EXPECT_EQ(p.name, "paper-gg");
  expect_training(p, "Bi-LSTM", Family::kRecurrent, 80, 0.001);
  expect_training(p, "DPCNN", Family::kPyramidConv, 20, 0.001);
  expect_training(p, "BERT-GG", Family::kTransformerFinetune, 6, 4e-5);
  expect_training(p, "XLNet-GG", Family::kTransformerFinetune, 6, 4e-5);
  EXPECT_EQ(p.for_family(Family::kRecurrent).training.epochs, 80);
}

TEST(Presets, FineTuneConstants) {
  for (const std::string domain : {"plotto", "scifi"}) {
    const Preset p = load_preset("paper-" + domain + "-ft");
    const std::string tag = domain == "plotto" ? "Plotto" : "SciFi";
    expect_training(p, "Bi-LSTM-" + tag, Family::kRecurrent, 20, 0.001);
    expect_training(p, "DPCNN-" + tag, Family::kPyramidConv, 4, 0.001);
    expect_training(p, "BERT-" + tag, Family::kTransformerFinetune, 3, 4e-5);
    expect_training(p, "XLNet-" + tag, Family::kTransformerFinetune, 3, 4e-5);
  }
}

TEST(Presets, Errors) {
  EXPECT_THROW(load_preset("no-such-preset"), ValidationError);
  EXPECT_THROW(preset_from_json(json{{"name", "x"}, {"entries", json::array()}}), ValidationError);
  EXPECT_THROW(preset_from_json(json{{"name", "x"},
                                     {"entries", {{{"family", "recurrent"}, {"extra", 1}}}}}),
               ValidationError);
  const Preset p = preset_from_json(
      json{{"name", "x"}, {"entries", {{{"name", "r"}, {"family", "recurrent"}}}}});
  EXPECT_THROW(p.for_family(Family::kPyramidConv), ValidationError);
}

// --- configs ---------------------------------------------------------------

TEST(Config, ParsesPresetsAndOverrides) {
  const json j = {
      {"name", "exp"},
      {"protocol", "fine_tuned"},
      {"train_corpus", "surrogate:everyday:600:0"},
      {"eval_corpus", {{"surrogate", {{"pairs", 100}, {"seed", 3}, {"domain", "adventure"}}}}},
      {"model_matrix", json::array({{{"name", "Bi-LSTM"},
                                     {"spec", {{"family", "recurrent"}, {"hidden_size", 32}}},
                                     {"preset", "paper-gg"},
                                     {"training", {{"seed", 9}}},
                                     {"fine_tune_preset", "paper-plotto-ft"}}})},
      {"seed", 4}};
  const ExperimentConfig c = experiment_from_json(j);
  ASSERT_EQ(c.model_matrix.size(), 1u);
  const auto& e = c.model_matrix[0];
  EXPECT_EQ(e.training.epochs, 80);
  EXPECT_EQ(e.training.seed, 9u);
  ASSERT_TRUE(e.fine_tune.has_value());
  EXPECT_EQ(e.fine_tune->epochs, 20);
  EXPECT_EQ(c.seed, 4u);
  ASSERT_TRUE(c.eval_corpus && c.eval_corpus->surrogate);
  EXPECT_EQ(c.eval_corpus->surrogate->domain, corpus::SurrogateDomain::kAdventure);
  EXPECT_EQ(c.train_corpus.surrogate->pairs, 600);

  // The serialized form parses back to the same config.
  EXPECT_EQ(experiment_from_json(json::parse(to_json(c).dump())), c);
}

TEST(Config, RelativePathsResolveAgainstBase) {
  const json j = {{"train_corpus", {{"path", "data/gg.jsonl"}, {"lexicon", "lex.txt"}}},
                  {"model_matrix", {{{"model_path", "m.bin"}, {"spec", {{"family", "linear_baseline"}}}}}},
                  {"protocol", "zero_shot"},
                  {"eval_corpus", "/abs/plotto.jsonl"}};
  const ExperimentConfig c = experiment_from_json(j, "/work/exp");
  EXPECT_EQ(*c.train_corpus.path, "/work/exp/data/gg.jsonl");
  EXPECT_EQ(*c.train_corpus.lexicon, "/work/exp/lex.txt");
  EXPECT_EQ(*c.eval_corpus->path, "/abs/plotto.jsonl");
  EXPECT_EQ(*c.model_matrix[0].model_path, "/work/exp/m.bin");
  EXPECT_EQ(c.model_matrix[0].name, "linear_baseline");
}

TEST(Config, ProtocolInvariants) {
  ExperimentConfig c = transfer(Protocol::kFineTuned, {linear()});
  EXPECT_THROW(validate(c), ValidationError);  // no fine-tune config anywhere
  c.model_matrix[0].fine_tune = TrainingConfig{};
  EXPECT_NO_THROW(validate(c));
  c.model_matrix[0].fine_tune.reset();
  c.fine_tune_config = TrainingConfig{};
  EXPECT_NO_THROW(validate(c));

  c.protocol = Protocol::kZeroShot;
  EXPECT_THROW(validate(c), ValidationError);  // fine_tune_config outside fine_tuned
  c.fine_tune_config.reset();
  EXPECT_NO_THROW(validate(c));
  c.eval_corpus = c.train_corpus;
  EXPECT_THROW(validate(c), ValidationError);
  c.eval_corpus.reset();
  EXPECT_THROW(validate(c), ValidationError);

  ExperimentConfig d = in_domain({linear(), linear()});
  EXPECT_THROW(validate(d), ValidationError);  // duplicate names
  d = in_domain({linear()});
  d.split_fraction = 1.0;
  EXPECT_THROW(validate(d), ValidationError);
  d.split_fraction = 0.5;
  d.eval_subset = EvalSubset::kTestSplit;
  EXPECT_THROW(validate(d), ValidationError);
  d.eval_subset = EvalSubset::kFull;
  d.model_matrix[0].model_path = "m.bin";
  EXPECT_THROW(validate(d), ValidationError);
}

TEST(Config, RejectsMalformedJson) {
  EXPECT_THROW(experiment_from_json(json{{"model_matrix", json::array()}}), ValidationError);
  EXPECT_THROW(experiment_from_json(json{{"train_corpus", "x.jsonl"}, {"bogus", 1}}), ValidationError);
  EXPECT_THROW(experiment_from_json(json{{"train_corpus", "surrogate:everyday:ten:0"}}),
               ValidationError);
  EXPECT_THROW(experiment_from_json(json{{"train_corpus", "surrogate:mars:10:0"}}), ValidationError);
  EXPECT_THROW(experiment_from_json(json{{"train_corpus", {{"path", "a"}, {"surrogate", json::object()}}}}),
               ValidationError);
  EXPECT_THROW(experiment_from_json(json{{"train_corpus", "x"}, {"protocol", "few_shot"}}),
               ValidationError);
  EXPECT_THROW(experiment_from_json(json{{"train_corpus", "x"},
                                         {"model_matrix", {{{"spec", {{"family", "recurrent"}}},
                                                            {"preset", "missing"}}}}}),
               ValidationError);
  EXPECT_THROW(load_experiment("/nonexistent/exp.json"), ValidationError);
}

// --- ingest ----------------------------------------------------------------

TEST(Ingest, PairsWithLexiconAndExclusions) {
  TempDir dir;
  {
    std::ofstream(dir.file("pairs.jsonl"))
        << R"({"id":"p1","positive_text":"Gallant shares his toys.","negative_text":"Goofus grabs the toys."})"
        << "\n"
        << R"({"id":"p2","positive_text":"Gallant waits.","negative_text":"Goofus shoves."})" << "\n";
    std::ofstream(dir.file("lex.txt")) << "Gallant\the\nGoofus\the\n";
    std::ofstream(dir.file("skip.txt")) << "# skipped\np2\n";
  }
  CorpusRef r;
  r.path = "pairs.jsonl";
  r.lexicon = "lex.txt";
  r.exclusions = "skip.txt";
  const auto out = ingest(r, dir.path());
  ASSERT_EQ(out.examples.size(), 2u);
  EXPECT_EQ(out.examples[0].text, "He shares his toys.");
  EXPECT_EQ(out.examples[0].label, Label::kNormative);
  EXPECT_EQ(out.examples[0].source, corpus::Source::kGoofusGallant);
  EXPECT_EQ(out.examples[1].text, "He grabs the toys.");
  EXPECT_EQ(out.manifest.original, 4);
  EXPECT_EQ(out.manifest.selected, 2);
  EXPECT_EQ(out.manifest.corpus_name, "pairs");

  r.source = corpus::Source::kPlotto;
  EXPECT_EQ(ingest(r, dir.path()).examples[0].source, corpus::Source::kPlotto);
}

TEST(Ingest, SurrogateAndMissingFile) {
  const auto out = ingest(surrogate(10, 2));
  EXPECT_EQ(out.examples.size(), 20u);
  EXPECT_EQ(out.examples[0].source, corpus::Source::kSurrogate);
  CorpusRef r;
  r.path = "/nonexistent/corpus.jsonl";
  try {
    ingest(r);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/corpus.jsonl"), std::string::npos);
  }
}

// --- in-domain -------------------------------------------------------------

TEST(InDomain, BaselineOnSurrogate) {
  const ResultsTable t = run_in_domain(in_domain({linear()}));
  ASSERT_EQ(t.rows.size(), 1u);
  ASSERT_TRUE(t.rows[0].ok()) << t.rows[0].error;
  EXPECT_GE(t.rows[0].report->accuracy, 0.90);
  EXPECT_EQ(t.rows[0].eval_examples, 600u);
  EXPECT_EQ(t.rows[0].digest_before, t.rows[0].digest_after);
  const auto& p = t.provenance;
  EXPECT_EQ(p["protocol"], "in_domain");
  EXPECT_EQ(p["split"]["train"], 600);
  EXPECT_EQ(p["corpora"]["train"]["digest"].get<std::string>().size(), 64u);
  EXPECT_EQ(p["rows"][0]["status"], "ok");
}

TEST(InDomain, EmptyMatrix) {
  const ResultsTable t = run_in_domain(in_domain({}));
  EXPECT_TRUE(t.rows.empty());
  EXPECT_TRUE(t.provenance["rows"].empty());
  EXPECT_TRUE(t.provenance.contains("experiment"));
  EXPECT_TRUE(t.provenance["corpora"]["train"].contains("digest"));
  EXPECT_EQ(emit_table(t, TableFormat::kCsv), "Model,Test acc,F1,Precision,Recall,MCC\n");
}

TEST(InDomain, FailingRowDoesNotAbortTable) {
  ModelEntry bad = linear("Broken");
  bad.spec.family = Family::kTransformerFinetune;
  bad.spec.backbone_id = "file:/nonexistent/backbone.bin";
  const ResultsTable t = run_in_domain(in_domain({linear("A"), bad, linear("C")}));
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_TRUE(t.rows[0].ok());
  EXPECT_FALSE(t.rows[1].ok());
  EXPECT_NE(t.rows[1].error.find("backbone"), std::string::npos) << t.rows[1].error;
  EXPECT_TRUE(t.rows[2].ok());
  EXPECT_EQ(t.provenance["rows"][1]["status"], "error");
  const std::string csv = emit_table(t, TableFormat::kCsv);
  EXPECT_NE(csv.find("Broken,error,error,error,error,error"), std::string::npos);
}

TEST(InDomain, ReproducibleAcrossRunsAndJobs) {
  ModelEntry lin = linear("Linear");
  ModelEntry rec;
  rec.name = "Bi-LSTM";
  rec.spec.family = Family::kRecurrent;
  rec.spec.hidden_size = 16;
  rec.spec.embedding_dim = 16;
  rec.training.epochs = 1;
  ExperimentConfig c = in_domain({lin, rec});
  c.train_corpus = surrogate(60, 5);
  const ResultsTable a = run_in_domain(c);
  c.jobs = 2;
  const ResultsTable b = run_in_domain(c);
  EXPECT_EQ(emit_table(a, TableFormat::kCsv), emit_table(b, TableFormat::kCsv));
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].digest_before, b.rows[i].digest_before);
  }
  EXPECT_EQ(a.rows[0].report->accuracy, b.rows[0].report->accuracy);
}

TEST(InDomain, RerunFromProvenanceAlone) {
  TempDir dir;
  const ResultsTable t = run_in_domain(in_domain({linear()}));
  write_results(t, dir.path(), "gg");
  const json prov = json::parse(slurp(dir.file("gg.provenance.json")));
  const ExperimentConfig again = experiment_from_json(prov["experiment"]);
  const ResultsTable u = run_experiment(again);
  EXPECT_EQ(emit_table(u, TableFormat::kCsv), slurp(dir.file("gg.csv")));
  EXPECT_EQ(u.provenance["corpora"]["train"]["digest"], prov["corpora"]["train"]["digest"]);
  EXPECT_EQ(slurp(dir.file("gg.md")), emit_table(t, TableFormat::kMarkdown));
}

TEST(InDomain, UsesPreassignedSplitsAndEvalCorpus) {
  TempDir dir;
  auto xs = ingest(surrogate(50, 7)).examples;
  const auto split = corpus::split_corpus(xs, 0.5, 3);
  std::vector<LabeledExample> both = split.train;
  for (auto& e : both) e.split = corpus::Split::kTrain;
  for (auto e : split.test) {
    e.split = corpus::Split::kTest;
    both.push_back(e);
  }
  corpus::save_examples(both, dir.file("assigned.jsonl"));
  ExperimentConfig c = in_domain({linear()});
  c.train_corpus = CorpusRef{};
  c.train_corpus.path = dir.file("assigned.jsonl");
  ResultsTable t = run_in_domain(c);
  EXPECT_EQ(t.provenance["split"]["train"], split.train.size());
  EXPECT_EQ(t.provenance["split"]["test_digest"], corpus::corpus_digest(split.test));

  corpus::save_examples(split.train, dir.file("tr.jsonl"));
  corpus::save_examples(split.test, dir.file("te.jsonl"));
  c.train_corpus.path = dir.file("tr.jsonl");
  c.eval_corpus = CorpusRef{};
  c.eval_corpus->path = dir.file("te.jsonl");
  const ResultsTable u = run_in_domain(c);
  EXPECT_EQ(emit_table(u, TableFormat::kCsv), emit_table(t, TableFormat::kCsv));
}

// --- transfer --------------------------------------------------------------

TEST(Transfer, ZeroShotKeepsDigests) {
  const ExperimentConfig c = transfer(Protocol::kZeroShot, {linear()});
  const ResultsTable t = run_transfer(c);
  ASSERT_TRUE(t.rows[0].ok()) << t.rows[0].error;
  EXPECT_EQ(t.rows[0].digest_before, t.rows[0].digest_after);
  EXPECT_EQ(t.rows[0].eval_examples, 400u);  // whole eval corpus
  EXPECT_EQ(t.provenance["eval_subset"], "full");
  EXPECT_EQ(t.provenance["rows"][0]["weights_digest_before"],
            t.provenance["rows"][0]["weights_digest_after"]);
}

TEST(Transfer, ZeroShotRejectsTamperedSource) {
  ExperimentConfig c = transfer(Protocol::kZeroShot, {linear()});
  auto sources = train_sources(c);
  sources[0].weights_digest = std::string(64, '0');
  EXPECT_THROW(run_transfer(c, sources), ContractViolation);
}

TEST(Transfer, ZeroShotRejectsSameCorpusContent) {
  ExperimentConfig c = transfer(Protocol::kZeroShot, {linear()});
  c.eval_corpus = surrogate(600, 0);
  c.eval_corpus->source = corpus::Source::kSurrogate;  // distinct ref, same content
  EXPECT_THROW(run_transfer(c), ValidationError);
}

TEST(Transfer, FineTuneWithZeroEpochsMatchesZeroShot) {
  ExperimentConfig zs = transfer(Protocol::kZeroShot, {linear()});
  zs.eval_subset = EvalSubset::kTestSplit;
  const auto sources = train_sources(zs);
  const ResultsTable a = run_transfer(zs, sources);

  ExperimentConfig ft = transfer(Protocol::kFineTuned, {linear()});
  ft.fine_tune_config = TrainingConfig{};
  ft.fine_tune_config->epochs = 0;
  const ResultsTable b = run_transfer(ft, sources);
  ASSERT_TRUE(a.rows[0].ok() && b.rows[0].ok());
  EXPECT_EQ(a.rows[0].eval_examples, b.rows[0].eval_examples);
  EXPECT_NEAR(a.rows[0].report->accuracy, b.rows[0].report->accuracy, 1e-9);
  EXPECT_NEAR(a.rows[0].report->f1, b.rows[0].report->f1, 1e-9);
  EXPECT_NEAR(a.rows[0].report->mcc, b.rows[0].report->mcc, 1e-9);
  EXPECT_EQ(b.rows[0].digest_before, b.rows[0].digest_after);
  EXPECT_EQ(a.provenance["split"]["test_digest"], b.provenance["split"]["test_digest"]);
}

TEST(Transfer, FineTuningImprovesOnDisjointDomain) {
  ModelEntry e = linear();
  e.fine_tune = load_preset("paper-plotto-ft").for_family(Family::kLinearBaseline).training;
  ExperimentConfig ft = transfer(Protocol::kFineTuned, {e});
  ExperimentConfig zs = transfer(Protocol::kZeroShot, {linear()});
  zs.eval_subset = EvalSubset::kTestSplit;
  const auto sources = train_sources(zs);
  const double zero = run_transfer(zs, sources).rows[0].report->accuracy;
  const ResultsTable tuned = run_transfer(ft, sources);
  ASSERT_TRUE(tuned.rows[0].ok()) << tuned.rows[0].error;
  EXPECT_GT(tuned.rows[0].report->accuracy, zero);
  EXPECT_NE(tuned.rows[0].digest_before, tuned.rows[0].digest_after);
}

TEST(Transfer, SourcesFromArtifacts) {
  TempDir dir;
  ExperimentConfig c = transfer(Protocol::kZeroShot, {linear()});
  const auto sources = train_sources(c);
  modelzoo::save_model(sources[0], dir.file("m.bin"));
  c.model_matrix[0].model_path = dir.file("m.bin");
  const ResultsTable a = run_transfer(c);
  const ResultsTable b = run_transfer(transfer(Protocol::kZeroShot, {linear()}), sources);
  EXPECT_EQ(emit_table(a, TableFormat::kCsv), emit_table(b, TableFormat::kCsv));
  EXPECT_EQ(a.rows[0].model_id, sources[0].model_id);

  c.model_matrix[0].model_path = dir.file("missing.bin");
  const ResultsTable m = run_transfer(c);
  EXPECT_FALSE(m.rows[0].ok());
}

TEST(Transfer, ProtocolChecks) {
  EXPECT_THROW(run_transfer(in_domain({linear()})), ValidationError);
  EXPECT_THROW(run_in_domain(transfer(Protocol::kZeroShot, {linear()})), ValidationError);
  const ExperimentConfig c = transfer(Protocol::kZeroShot, {linear()});
  std::vector<modelzoo::ModelHandle> two(2);
  EXPECT_THROW(run_transfer(c, two), ValidationError);
}

}  // namespace
}  // namespace normprior::experiments
