// Acceptance run: one PASS/FAIL line per primary criterion, exit 0 iff all pass.
// Usage: acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "../metrics_oracle.hpp"
#include "../test_util.hpp"
#include "httplib.h"
#include "json.hpp"
#include "normprior/annotation.hpp"
#include "normprior/cli.hpp"
#include "normprior/corpus.hpp"
#include "normprior/error.hpp"
#include "normprior/experiments.hpp"
#include "normprior/metrics.hpp"
#include "normprior/modelzoo.hpp"
#include "normprior/surrogate.hpp"

namespace {

using namespace normprior;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// --- 1 ---------------------------------------------------------------------

void metrics_oracle(Check& c) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240611);
  int mismatches = 0;
  for (int set = 0; set < 200; ++set) {
    const int n = 1 + static_cast<int>(rng() % 50);
    // Skew the label rates so degenerate sets (one class only) show up too.
    const double p_pred = std::uniform_real_distribution<double>(0, 1)(rng);
    const double p_gold = std::uniform_real_distribution<double>(0, 1)(rng);
    std::vector<metrics::Prediction> preds;
    for (int i = 0; i < n; ++i) {
      const bool pp = std::bernoulli_distribution(p_pred)(rng);
      const bool gg = std::bernoulli_distribution(p_gold)(rng);
      preds.push_back({pp ? Label::kNormative : Label::kNonNormative,
                       gg ? Label::kNormative : Label::kNonNormative});
    }
    const auto cm = metrics::confusion(preds);
    const auto t = metrics::testing_oracle::tally(preds);
    if (cm.tp != t.tp || cm.fp != t.fp || cm.tn != t.tn || cm.fn != t.fn) {
      ++mismatches;
      continue;
    }
    for (bool macro : {false, true}) {
      const auto r = metrics::compute_metrics(
          cm, macro ? metrics::Averaging::kMacro : metrics::Averaging::kPositiveClass);
      const auto ref = metrics::testing_oracle::brute_force(preds, macro);
      const bool ok = std::abs(r.accuracy - ref.accuracy) <= 1e-15 &&
                      std::abs(r.precision - ref.precision) <= 1e-15 &&
                      std::abs(r.recall - ref.recall) <= 1e-15 &&
                      std::abs(r.f1 - ref.f1) <= 1e-15 && std::abs(r.mcc - ref.mcc) <= 1e-12 &&
                      r.n == static_cast<std::uint64_t>(n);
      mismatches += !ok;
    }
  }
  const double secs = seconds_since(t0);
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatching sets");
  c.expect(secs < 5.0, "runtime " + fmt(secs) + " s");
  c.note("200 sets in " + fmt(secs, 3) + " s");
}

// --- 2 ---------------------------------------------------------------------

void table_row(Check& c) {
  const double p = 0.931, r = 0.885;
  const double f1 = 2 * p * r / (p + r);
  c.expect(std::abs(f1 - 0.907) <= 0.001, "f1 = " + fmt(f1, 6));

  // Same rates through the metrics module: R = 8850/10000, P = 8850/9506.
  metrics::ConfusionMatrix cm{8850, 656, 0, 1150};
  cm.tn = 20000 - cm.tp - cm.fp - cm.fn;
  const auto rep = metrics::compute_metrics(cm);
  c.expect(std::abs(rep.precision - 0.931) < 5e-4 && std::abs(rep.recall - 0.885) < 5e-4,
           "confusion-matrix P/R off");
  c.expect(std::abs(rep.f1 - 0.907) <= 0.001, "module f1 = " + fmt(rep.f1, 6));

  experiments::ResultsTable t;
  experiments::ResultRow row;
  row.model_name = "BERT-GG";
  metrics::EvalReport m;
  m.accuracy = 0.908;
  m.f1 = f1;
  m.precision = p;
  m.recall = r;
  m.mcc = 0.818;
  row.report = m;
  t.rows.push_back(row);
  const std::string csv = experiments::emit_table(t, experiments::TableFormat::kCsv);
  c.expect(csv == "Model,Test acc,F1,Precision,Recall,MCC\nBERT-GG,0.908,0.907,0.931,0.885,0.818\n",
           "csv: " + csv);
  const std::string md = experiments::emit_table(t, experiments::TableFormat::kMarkdown);
  c.expect(md.find("| BERT-GG | 0.908 | 0.907 | 0.931 | 0.885 | 0.818 |") != std::string::npos,
           "markdown: " + md);
  c.note("f1(0.931, 0.885) = " + fmt(f1, 4));
}

// --- 3 ---------------------------------------------------------------------

void consensus(Check& c) {
  int checked = 0;
  for (int md : {0, 1}) {
    const annotation::ConsensusPolicy policy(5, md);
    for (int mask = 0; mask < 32; ++mask) {
      std::vector<annotation::VoteRecord> votes;
      int normative = 0;
      for (int i = 0; i < 5; ++i) {
        const bool n = (mask >> i) & 1;
        normative += n;
        votes.push_back({"item", "a" + std::to_string(i),
                         n ? Label::kNormative : Label::kNonNormative, {}});
      }
      const int minority = std::min(normative, 5 - normative);
      const std::optional<Label> expected =
          minority > md ? std::nullopt
                        : std::optional<Label>(normative >= 3 ? Label::kNormative
                                                              : Label::kNonNormative);
      const auto got = annotation::aggregate_consensus(votes, policy);
      // Order independence: reversed input must agree.
      std::reverse(votes.begin(), votes.end());
      const auto rev = annotation::aggregate_consensus(votes, policy);
      c.expect(got.label == expected && rev.label == expected,
               "pattern " + std::to_string(mask) + " max_dissent " + std::to_string(md));
      ++checked;
    }
  }

  // The two discard rules, one dissenting vote each.
  auto four_one = [](int md) {
    annotation::AnnotationStore store({{"p1", "He helps.", {}, {}, {}, 0}},
                                      annotation::ConsensusPolicy(5, md));
    for (int i = 0; i < 4; ++i) store.submit_vote("p1", "a" + std::to_string(i), Label::kNormative);
    return store.submit_vote("p1", "a4", Label::kNonNormative);
  };
  const auto tolerant = four_one(1);
  c.expect(tolerant.item_status == annotation::ItemStatus::kConsensus &&
               tolerant.label == Label::kNormative,
           "4-1 under one-dissent rule not kept");
  const auto strict = four_one(0);
  c.expect(strict.item_status == annotation::ItemStatus::kDiscarded, "4-1 under zero-dissent rule not discarded");
  c.note(std::to_string(checked) + " patterns");
}

// --- 4 ---------------------------------------------------------------------

double accuracy(const modelzoo::ModelHandle& h, std::span<const corpus::LabeledExample> xs) {
  std::size_t ok = 0;
  for (const auto& e : xs) ok += modelzoo::predict(h, e.text) == e.label;
  return static_cast<double>(ok) / static_cast<double>(xs.size());
}

modelzoo::ModelSpec desk_spec(modelzoo::Family f) {
  modelzoo::ModelSpec s;
  s.family = f;
  s.hidden_size = 32;
  s.embedding_dim = 32;
  s.conv_weight_layers = 7;
  return s;
}

modelzoo::TrainingConfig desk_training(int epochs, double lr) {
  modelzoo::TrainingConfig t;
  t.epochs = epochs;
  t.learning_rate = lr;
  return t;
}

void learnability(Check& c) {
  using modelzoo::Family;
  const auto t0 = Clock::now();
  const auto examples = corpus::explode_pairs(corpus::generate_surrogate(600, 0));
  const auto split = corpus::split_corpus(examples, 0.5, 0);

  const auto base = modelzoo::fit(desk_spec(Family::kLinearBaseline), split.train, desk_training(10, 0.05));
  const double baseline = accuracy(base, split.test);
  c.expect(baseline >= 0.90, "linear_baseline test acc " + fmt(baseline));
  c.note("linear " + fmt(baseline));

  const std::vector<std::pair<Family, modelzoo::TrainingConfig>> full{
      {Family::kRecurrent, desk_training(8, 3e-3)},
      {Family::kPyramidConv, desk_training(6, 1e-3)},
  };
  for (const auto& [f, cfg] : full) {
    const auto h = modelzoo::fit(desk_spec(f), split.train, cfg);
    const double acc = accuracy(h, split.test);
    c.expect(acc >= baseline - 0.05, std::string(to_string(f)) + " test acc " + fmt(acc));
    c.note(std::string(to_string(f)) + " " + fmt(acc));
  }

  const std::vector<corpus::LabeledExample> subset(split.train.begin(), split.train.begin() + 32);
  for (Family f : {Family::kRecurrent, Family::kPyramidConv, Family::kTransformerFinetune}) {
    auto cfg = desk_training(200, f == Family::kTransformerFinetune ? 1e-3 : 3e-3);
    cfg.patience = 5;  // stops once the loss has flattened out
    modelzoo::TrainingReport report;
    const auto h = modelzoo::fit(desk_spec(f), subset, cfg, {"", &report});
    const double acc = accuracy(h, subset);
    c.expect(acc == 1.0, std::string(to_string(f)) + " subset train acc " + fmt(acc));
    c.note(std::string(to_string(f)) + " subset " + fmt(acc) + "/" + std::to_string(report.epochs_run) + "ep");
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 900, "runtime " + fmt(secs, 0) + " s");
  c.note(fmt(secs, 1) + " s");
}

// --- 5 ---------------------------------------------------------------------

experiments::CorpusRef surrogate_ref(int pairs, std::uint64_t seed, corpus::SurrogateDomain d) {
  experiments::CorpusRef r;
  r.surrogate = experiments::CorpusRef::Surrogate{pairs, seed, d};
  return r;
}

void zero_shot(Check& c) {
  using experiments::Protocol;
  experiments::ModelEntry lin;
  lin.name = "Linear";
  lin.spec.family = modelzoo::Family::kLinearBaseline;
  lin.training = desk_training(10, 0.05);
  experiments::ModelEntry rec;
  rec.name = "Bi-LSTM";
  rec.spec = desk_spec(modelzoo::Family::kRecurrent);
  rec.training = desk_training(3, 3e-3);

  experiments::ExperimentConfig zs;
  zs.name = "transfer";
  zs.protocol = Protocol::kZeroShot;
  zs.train_corpus = surrogate_ref(600, 0, corpus::SurrogateDomain::kEveryday);
  zs.eval_corpus = surrogate_ref(200, 1, corpus::SurrogateDomain::kAdventure);
  zs.model_matrix = {lin, rec};
  const auto sources = experiments::train_sources(zs);

  const auto full = experiments::run_transfer(zs, sources);
  for (const auto& row : full.rows) {
    c.expect(row.ok(), row.model_name + ": " + row.error);
    c.expect(row.digest_before == row.digest_after && !row.digest_before.empty(),
             row.model_name + " digest changed");
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    c.expect(modelzoo::compute_digest(sources[i]) == sources[i].weights_digest, "source digest drifted");
  }

  zs.eval_subset = experiments::EvalSubset::kTestSplit;
  const auto zero = experiments::run_transfer(zs, sources);

  experiments::ExperimentConfig noop = zs;
  noop.protocol = Protocol::kFineTuned;
  noop.eval_subset = experiments::EvalSubset::kFull;  // fine-tuning always scores the test side
  noop.fine_tune_config = desk_training(0, 1e-3);
  const auto same = experiments::run_transfer(noop, sources);
  for (std::size_t i = 0; i < zero.rows.size(); ++i) {
    if (!zero.rows[i].ok() || !same.rows[i].ok()) {
      c.expect(false, "row failed");
      continue;
    }
    const auto& a = *zero.rows[i].report;
    const auto& b = *same.rows[i].report;
    c.expect(std::abs(a.accuracy - b.accuracy) <= 1e-9 && std::abs(a.f1 - b.f1) <= 1e-9 &&
                 std::abs(a.precision - b.precision) <= 1e-9 &&
                 std::abs(a.recall - b.recall) <= 1e-9 && std::abs(a.mcc - b.mcc) <= 1e-9,
             zero.rows[i].model_name + " epochs=0 differs from zero-shot");
  }

  experiments::ExperimentConfig ft = noop;
  ft.fine_tune_config.reset();
  ft.model_matrix[0].fine_tune =
      experiments::load_preset("paper-plotto-ft").for_family(modelzoo::Family::kLinearBaseline).training;
  ft.model_matrix.resize(1);
  const auto tuned = experiments::run_transfer(ft, std::span(sources.data(), 1));
  if (!tuned.rows[0].ok() || !zero.rows[0].ok()) {
    c.expect(false, "fine-tune row failed: " + tuned.rows[0].error);
    return;
  }
  const double before = zero.rows[0].report->accuracy;
  const double after = tuned.rows[0].report->accuracy;
  c.expect(after > before, "fine-tuned " + fmt(after) + " vs zero-shot " + fmt(before));
  c.note("linear zero-shot " + fmt(before) + " -> fine-tuned " + fmt(after));
}

// --- 6 ---------------------------------------------------------------------

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void protocol_fidelity(Check& c) {
  using modelzoo::Family;
  struct Want {
    const char* preset;
    Family family;
    int epochs;
    double lr;
  };
  const std::vector<Want> wants{
      {"paper-gg", Family::kRecurrent, 80, 0.001},
      {"paper-gg", Family::kPyramidConv, 20, 0.001},
      {"paper-gg", Family::kTransformerFinetune, 6, 4e-5},
      {"paper-plotto-ft", Family::kRecurrent, 20, 0.001},
      {"paper-plotto-ft", Family::kPyramidConv, 4, 0.001},
      {"paper-plotto-ft", Family::kTransformerFinetune, 3, 4e-5},
      {"paper-scifi-ft", Family::kRecurrent, 20, 0.001},
      {"paper-scifi-ft", Family::kPyramidConv, 4, 0.001},
      {"paper-scifi-ft", Family::kTransformerFinetune, 3, 4e-5},
  };
  for (const auto& w : wants) {
    const auto p = experiments::load_preset(w.preset);
    const auto& t = p.for_family(w.family).training;
    c.expect(t.epochs == w.epochs && t.learning_rate == w.lr && t.max_seq_len == 128 &&
                 t.grad_accum_steps == 1,
             std::string(w.preset) + "/" + std::string(to_string(w.family)));
  }
  // Both transformer rows of each fine-tuning preset carry 3 epochs.
  for (const char* name : {"paper-plotto-ft", "paper-scifi-ft"}) {
    int threes = 0;
    for (const auto& e : experiments::load_preset(name).entries) {
      threes += e.family == Family::kTransformerFinetune && e.training.epochs == 3;
      c.expect(e.training.max_seq_len == 128 && e.training.grad_accum_steps == 1, e.name);
    }
    c.expect(threes == 2, std::string(name) + " transformer rows");
  }

  // ingest -> anonymize -> split -> train -> eval, then report from one config.
  testing_util::TempDir dir;
  {
    std::ofstream raw(dir.file("raw.jsonl"));
    for (const auto& p : corpus::generate_surrogate(300, 5)) {
      json j = {{"id", p.id},
                {"positive_text", "Gallant: " + p.positive_text},
                {"negative_text", "Goofus: " + p.negative_text},
                {"year", nullptr}};
      raw << j.dump() << "\n";
    }
    std::ofstream(dir.file("lex.txt")) << "# characters\nGallant\the\nGoofus\the\n";
  }
  auto step = [&](const std::vector<std::string>& args) {
    const auto r = cli(args);
    c.expect(r.code == 0, args[0] + " exited " + std::to_string(r.code) + ": " + r.err);
    return r;
  };
  step({"anonymize", "--in", dir.file("raw.jsonl"), "--lexicon", dir.file("lex.txt"), "--out",
        dir.file("anon.jsonl")});
  step({"ingest", "--in", dir.file("anon.jsonl"), "--out", dir.file("gg.jsonl")});
  step({"split", "--in", dir.file("gg.jsonl"), "--fraction", "0.5", "--seed", "0", "--out-train",
        dir.file("train.jsonl"), "--out-test", dir.file("test.jsonl")});
  step({"train", "--spec", "linear_baseline", "--preset", "paper-gg", "--train", dir.file("train.jsonl"),
        "--out", dir.file("linear.bin"), "--model-id", "linear-gg"});
  const auto ev = step({"eval", "--model", dir.file("linear.bin"), "--test", dir.file("test.jsonl"),
                        "--format", "csv"});
  const std::string header = "Model,Test acc,F1,Precision,Recall,MCC";
  c.expect(ev.out.rfind(header + "\n", 0) == 0, "eval schema: " + ev.out);

  const json cfg = {
      {"name", "gg"},
      {"protocol", "in_domain"},
      {"train_corpus", "gg.jsonl"},
      {"split_fraction", 0.5},
      {"seed", 0},
      {"model_matrix",
       json::array({{{"name", "Linear"}, {"spec", {{"family", "linear_baseline"}}}, {"preset", "paper-gg"}},
                    {{"name", "Bi-LSTM"},
                     {"spec", {{"family", "recurrent"}, {"hidden_size", 16}, {"embedding_dim", 16}}},
                     {"preset", "paper-gg"},
                     {"training", {{"epochs", 3}, {"learning_rate", 3e-3}}}}})}};
  std::ofstream(dir.file("experiment.json")) << cfg.dump(2);
  const auto rep = step({"report", "--config", dir.file("experiment.json"), "--out-dir", dir.file("out")});
  std::istringstream lines(rep.out);
  std::string line;
  std::getline(lines, line);
  c.expect(line == header, "report header: " + line);
  int rows = 0;
  const std::regex row_re(R"(^[^,]+(,(0|1|-?0)\.\d{3}){5}$)");
  while (std::getline(lines, line)) {
    ++rows;
    c.expect(std::regex_match(line, row_re), "report row: " + line);
  }
  c.expect(rows == 2, "report rows " + std::to_string(rows));
  for (const char* ext : {".csv", ".md", ".provenance.json"}) {
    c.expect(std::filesystem::exists(dir.file(std::string("out/gg") + ext)), std::string("missing gg") + ext);
  }
  c.note(std::to_string(wants.size()) + " preset constants, pipeline rows " + std::to_string(rows));
}

// --- 7 ---------------------------------------------------------------------

void service(Check& c) {
  testing_util::TempDir dir;
  const auto examples = corpus::explode_pairs(corpus::generate_surrogate(300, 0));
  const auto h = modelzoo::fit(desk_spec(modelzoo::Family::kLinearBaseline), examples,
                               desk_training(10, 0.05), {"linear-gg", nullptr});
  std::filesystem::create_directories(dir.file("models"));
  modelzoo::save_model(h, dir.file("models/linear.bin"));

  std::ostringstream out, err;
  int code = -1;
  std::thread server([&] {
    code = cli::run_cli({"serve", "--model-dir", dir.file("models"), "--port", "0"}, out, err);
  });
  for (int i = 0; i < 500 && cli::serving_port() == 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  const int port = cli::serving_port();
  if (port == 0) {
    cli::request_shutdown();
    server.join();
    c.expect(false, "server did not start: " + err.str());
    return;
  }

  httplib::Client client("127.0.0.1", port);
  client.set_tcp_nodelay(true);
  const auto tests = corpus::explode_pairs(corpus::generate_surrogate(100, 9));
  std::vector<double> latency_ms;
  int inconsistent = 0, failures = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const std::string& text = tests[i % tests.size()].text;
    const auto t0 = Clock::now();
    auto res = client.Post("/score", json{{"text", text}}.dump(), "application/json");
    latency_ms.push_back(seconds_since(t0) * 1000);
    if (!res || res->status != 200) {
      ++failures;
      continue;
    }
    const json j = json::parse(res->body);
    const double p = j["p_normative"];
    const std::string label = j["label"];
    inconsistent += (label == "normative") != (p >= 0.5) || p < 0 || p > 1;
    inconsistent += std::abs(p - modelzoo::predict_proba(h, text)) > 1e-12;
    inconsistent += j["model_id"] != "linear-gg";
  }
  cli::request_shutdown();
  server.join();

  std::sort(latency_ms.begin(), latency_ms.end());
  const double p50 = latency_ms.empty() ? 1e9 : latency_ms[latency_ms.size() / 2];
  c.expect(failures == 0, std::to_string(failures) + " failed requests");
  c.expect(inconsistent == 0, std::to_string(inconsistent) + " inconsistent responses");
  c.expect(p50 < 50.0, "p50 " + fmt(p50, 2) + " ms");
  c.expect(code == 0, "serve exited " + std::to_string(code) + ": " + err.str());

  const std::regex start_re("startup digest (\\S+) ([0-9a-f]{64})");
  const std::regex stop_re("shutdown digest (\\S+) ([0-9a-f]{64})");
  std::smatch a, b;
  const std::string log = err.str();
  const bool found = std::regex_search(log, a, start_re) && std::regex_search(log, b, stop_re);
  c.expect(found && a[2] == b[2] && a[2] == h.weights_digest, "digest log: " + log);
  c.note("p50 " + fmt(p50, 2) + " ms over " + std::to_string(latency_ms.size()) + " requests");
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<void(Check&)>>> criteria{
      {1, {"metrics oracle", metrics_oracle}},
      {2, {"table-row consistency", table_row}},
      {3, {"consensus exhaustiveness", consensus}},
      {4, {"learnability at desk scale", learnability}},
      {5, {"zero-shot contract", zero_shot}},
      {6, {"protocol fidelity", protocol_fidelity}},
      {7, {"service", service}},
  };
  if (!std::getenv("NORMPRIOR_PRESET_DIR")) setenv("NORMPRIOR_PRESET_DIR", NORMPRIOR_SOURCE_DIR "/presets", 1);

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [n, _] : criteria) selected.push_back(n);
  }

  int failed = 0;
  for (int n : selected) {
    auto it = criteria.find(n);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << n << "\n";
      return 2;
    }
    Check c;
    const auto t0 = Clock::now();
    try {
      it->second.second(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = c.failures.empty();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " " << n << " " << it->second.first << " ("
              << fmt(seconds_since(t0), 1) << " s";
    for (const auto& note : c.notes) std::cout << "; " << note;
    std::cout << ")\n";
    for (const auto& f : c.failures) std::cout << "    " << f << "\n";
    std::cout.flush();
  }
  return failed == 0 ? 0 : 1;
}
