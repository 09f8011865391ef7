#include "normprior/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "CLI11.hpp"
#include "normprior/annotation.hpp"
#include "normprior/corpus.hpp"
#include "normprior/error.hpp"
#include "normprior/experiments.hpp"
#include "normprior/modelzoo.hpp"
#include "normprior/service.hpp"
#include "normprior/text.hpp"

namespace normprior::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::atomic<bool> g_stop{false};
std::atomic<int> g_port{0};

extern "C" void on_signal(int) { g_stop = true; }

json read_json_file(const std::string& path) {
  const std::string data = text::read_file(path);
  try {
    return json::parse(data);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

corpus::Source source_from(const std::string& s) {
  corpus::Source out;
  if (!corpus::parse_source(s, out)) throw ValidationError("unknown corpus source: " + s);
  return out;
}

int env_port() {
  const char* p = std::getenv("NORMPRIOR_PORT");
  if (!p || !*p) return 8080;
  try {
    return std::stoi(p);
  } catch (const std::exception&) {
    throw ValidationError(std::string("NORMPRIOR_PORT is not a number: ") + p);
  }
}

// Blocks until request_shutdown() or a signal.
void serve_until_stopped(httplib::Server& server, const std::string& host, int port,
                         std::ostream& err) {
  g_stop = false;
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    std::signal(SIGINT, prev_int);
    std::signal(SIGTERM, prev_term);
    throw ValidationError("cannot listen on " + host + ":" + std::to_string(port));
  }
  err << "listening on " << host << ":" << bound << std::endl;
  std::thread watcher([&server] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
  });
  g_port = bound;
  server.listen_after_bind();
  g_port = 0;
  g_stop = true;
  watcher.join();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
}

void print_digests(std::ostream& err, const char* when,
                   const std::map<std::string, std::string>& digests) {
  for (const auto& [id, d] : digests) err << when << " digest " << id << " " << d << "\n";
}

// Model and training flags of the train subcommand.
struct TrainFlags {
  std::string spec = "linear_baseline";
  std::optional<std::string> preset, config;
  std::optional<int> epochs, batch_size, max_seq_len, hidden_size, embedding_dim, grad_accum;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> embeddings, backbone;
};

modelzoo::ModelSpec spec_of(const TrainFlags& f) {
  modelzoo::ModelSpec s;
  if (f.spec.size() > 5 && f.spec.compare(f.spec.size() - 5, 5, ".json") == 0) {
    s = modelzoo::spec_from_json(read_json_file(f.spec));
  } else {
    s.family = modelzoo::family_from_string(f.spec);
  }
  if (f.hidden_size) s.hidden_size = *f.hidden_size;
  if (f.embedding_dim) s.embedding_dim = *f.embedding_dim;
  if (f.embeddings) s.embeddings_path = *f.embeddings;
  if (f.backbone) s.backbone_id = *f.backbone;
  modelzoo::validate(s);
  return s;
}

modelzoo::TrainingConfig config_of(const TrainFlags& f, modelzoo::Family family) {
  json merged = json::object();
  if (f.preset) {
    merged = json::parse(
        modelzoo::to_json(experiments::load_preset(*f.preset).for_family(family).training).dump());
  }
  if (f.config) merged.update(read_json_file(*f.config));
  auto c = modelzoo::config_from_json(merged);
  if (f.epochs) c.epochs = *f.epochs;
  if (f.learning_rate) c.learning_rate = *f.learning_rate;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.max_seq_len) c.max_seq_len = *f.max_seq_len;
  if (f.grad_accum) c.grad_accum_steps = *f.grad_accum;
  if (f.seed) c.seed = *f.seed;
  modelzoo::validate(c);
  return c;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--spec", f.spec, "Model family name or a ModelSpec JSON file");
  cmd->add_option("--preset", f.preset, "Training preset name or file");
  cmd->add_option("--config", f.config, "TrainingConfig JSON file (applied over the preset)");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--learning-rate", f.learning_rate);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--max-seq-len", f.max_seq_len);
  cmd->add_option("--grad-accum", f.grad_accum);
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--hidden-size", f.hidden_size);
  cmd->add_option("--embedding-dim", f.embedding_dim, "Width of learned word embeddings");
  cmd->add_option("--embeddings", f.embeddings, "Word-vector file for pretrained_static");
  cmd->add_option("--backbone", f.backbone, "Transformer backbone id");
}

void emit_results(const experiments::ResultsTable& t, const std::string& format,
                  const std::optional<std::string>& out_dir, const std::string& stem,
                  std::ostream& out) {
  if (out_dir) experiments::write_results(t, *out_dir, stem);
  out << experiments::emit_table(t, experiments::table_format_from_string(format));
}

}  // namespace

void request_shutdown() { g_stop = true; }
int serving_port() { return g_port.load(); }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Normative text classification pipeline", "normprior"};
  app.require_subcommand(1);

  // ingest
  struct {
    std::optional<std::string> in, lexicon, exclude, source, manifest;
    std::optional<int> surrogate;
    std::string domain = "everyday";
    std::uint64_t seed = 0;
    std::string out;
  } ing;
  auto* ingest = app.add_subcommand("ingest", "Load, filter and explode a corpus into labeled examples");
  auto* in_opt = ingest->add_option("--in", ing.in, "Pair or example JSONL file");
  auto* sur_opt = ingest->add_option("--surrogate", ing.surrogate, "Generate this many surrogate pairs");
  in_opt->excludes(sur_opt);
  ingest->add_option("--domain", ing.domain, "Surrogate domain")->check(CLI::IsMember({"everyday", "adventure"}));
  ingest->add_option("--seed", ing.seed, "Surrogate seed");
  ingest->add_option("--lexicon", ing.lexicon, "Character lexicon (name<TAB>pronoun)");
  ingest->add_option("--exclude", ing.exclude, "File of ids to drop");
  ingest->add_option("--source", ing.source, "Source tag for exploded pairs");
  ingest->add_option("--out", ing.out, "Output example JSONL")->required();
  ingest->add_option("--manifest", ing.manifest, "Also write the dataset manifest here");
  ingest->callback([&] {
    if (!ing.in && !ing.surrogate) throw ValidationError("ingest needs --in or --surrogate");
    experiments::CorpusRef ref;
    ref.path = ing.in;
    if (ing.surrogate) {
      ref.surrogate = experiments::CorpusRef::Surrogate{
          *ing.surrogate, ing.seed,
          ing.domain == "adventure" ? corpus::SurrogateDomain::kAdventure
                                    : corpus::SurrogateDomain::kEveryday};
    }
    ref.lexicon = ing.lexicon;
    ref.exclusions = ing.exclude;
    if (ing.source) ref.source = source_from(*ing.source);
    const auto r = experiments::ingest(ref);
    corpus::save_examples(r.examples, ing.out);
    const std::string manifest = corpus::to_json(r.manifest);
    if (ing.manifest) text::write_file_atomic(*ing.manifest, manifest + "\n");
    out << manifest << "\n";
  });

  // anonymize
  struct {
    std::string in, lexicon, out;
  } an;
  auto* anonymize = app.add_subcommand("anonymize", "Replace character names with pronouns");
  anonymize->add_option("--in", an.in, "Pair or example JSONL file")->required();
  anonymize->add_option("--lexicon", an.lexicon, "Character lexicon")->required();
  anonymize->add_option("--out", an.out, "Output file, same kind as the input")->required();
  anonymize->callback([&] {
    const auto lex = corpus::load_lexicon(an.lexicon);
    std::size_t records = 0, changed = 0;
    auto apply = [&](std::string& t) {
      std::string a = corpus::anonymize(t, lex);
      changed += a != t;
      t = std::move(a);
    };
    if (corpus::detect_kind(an.in) == corpus::FileKind::kPairs) {
      auto pairs = corpus::load_pairs(an.in);
      for (auto& p : pairs) {
        apply(p.positive_text);
        apply(p.negative_text);
      }
      records = pairs.size();
      corpus::save_pairs(pairs, an.out);
    } else {
      auto xs = corpus::load_examples(an.in);
      for (auto& e : xs) apply(e.text);
      records = xs.size();
      corpus::save_examples(xs, an.out);
    }
    out << ordered_json{{"records", records}, {"texts_changed", changed}}.dump() << "\n";
  });

  // split
  struct {
    std::string in, out_train, out_test;
    double fraction = 0.5;
    std::uint64_t seed = 0;
  } sp;
  auto* split = app.add_subcommand("split", "Stratified train/test split");
  split->add_option("--in", sp.in, "Example (or pair) JSONL file")->required();
  split->add_option("--fraction", sp.fraction, "Train fraction")->required();
  split->add_option("--seed", sp.seed);
  split->add_option("--out-train", sp.out_train)->required();
  split->add_option("--out-test", sp.out_test)->required();
  split->callback([&] {
    experiments::CorpusRef ref;
    ref.path = sp.in;
    const auto r = corpus::split_corpus(experiments::ingest(ref).examples, sp.fraction, sp.seed);
    corpus::save_examples(r.train, sp.out_train);
    corpus::save_examples(r.test, sp.out_test);
    out << ordered_json{{"train", r.train.size()}, {"test", r.test.size()}}.dump() << "\n";
  });

  // train
  TrainFlags tf;
  struct {
    std::string train, out;
    std::optional<std::string> model_id;
  } tr;
  auto* train = app.add_subcommand("train", "Fit a classifier and write the model artifact");
  add_train_flags(train, tf);
  train->add_option("--train", tr.train, "Training example JSONL")->required();
  train->add_option("--out", tr.out, "Model artifact path")->required();
  train->add_option("--model-id", tr.model_id);
  train->callback([&] {
    const auto spec = spec_of(tf);
    const auto cfg = config_of(tf, spec.family);
    experiments::CorpusRef ref;
    ref.path = tr.train;
    const auto data = experiments::ingest(ref).examples;
    modelzoo::TrainingReport report;
    modelzoo::FitOptions opts;
    opts.model_id = tr.model_id.value_or("");
    opts.report = &report;
    const auto h = modelzoo::fit(spec, data, cfg, opts);
    modelzoo::save_model(h, tr.out);
    ordered_json o = {{"model_id", h.model_id},
                      {"weights_digest", h.weights_digest},
                      {"epochs_run", report.epochs_run}};
    o["final_loss"] = report.epoch_loss.empty() ? ordered_json(nullptr)
                                                : ordered_json(report.epoch_loss.back());
    out << o.dump() << "\n";
  });

  // eval
  struct {
    std::string model, test, averaging = "positive_class", format = "json";
    std::optional<std::string> name;
  } ev;
  auto* eval = app.add_subcommand("eval", "Score a model on a labeled test set");
  eval->add_option("--model", ev.model, "Model artifact")->required();
  eval->add_option("--test", ev.test, "Test example JSONL")->required();
  eval->add_option("--name", ev.name, "Row name (default: model id)");
  eval->add_option("--averaging", ev.averaging)->check(CLI::IsMember({"positive_class", "macro"}));
  eval->add_option("--format", ev.format)->check(CLI::IsMember({"json", "csv", "markdown"}));
  eval->callback([&] {
    const auto h = modelzoo::load_model(ev.model);
    experiments::CorpusRef ref;
    ref.path = ev.test;
    const auto test = experiments::ingest(ref).examples;
    if (test.empty()) throw ValidationError("test set is empty: " + ev.test);
    std::vector<metrics::Prediction> preds;
    for (const auto& e : test) preds.push_back({modelzoo::predict(h, e.text), e.label});
    const auto report = metrics::compute_metrics(metrics::confusion(preds),
                                                 metrics::averaging_from_string(ev.averaging));
    const std::string name = ev.name.value_or(h.model_id);
    if (ev.format == "json") {
      out << metrics::to_json(name, report) << "\n";
    } else {
      experiments::ResultsTable t;
      t.rows.push_back({name, report, "", h.model_id, h.weights_digest, h.weights_digest, test.size()});
      out << experiments::emit_table(t, experiments::table_format_from_string(ev.format));
    }
  });

  // transfer
  struct {
    std::optional<std::string> config, model, eval_corpus, fine_tune_preset, out_dir;
    std::string protocol = "zero_shot", subset = "full", format = "csv", stem = "transfer";
    std::string train_corpus;
    double fraction = 0.5;
    std::uint64_t seed = 0;
  } tx;
  auto* transfer = app.add_subcommand("transfer", "Zero-shot or fine-tuned transfer evaluation");
  transfer->add_option("--config", tx.config, "Experiment JSON (zero_shot or fine_tuned)");
  transfer->add_option("--model", tx.model, "Source model artifact (instead of --config)");
  transfer->add_option("--eval", tx.eval_corpus, "Target corpus (with --model)");
  transfer->add_option("--protocol", tx.protocol)->check(CLI::IsMember({"zero_shot", "fine_tuned"}));
  transfer->add_option("--fine-tune-preset", tx.fine_tune_preset);
  transfer->add_option("--subset", tx.subset, "zero_shot evaluation subset")
      ->check(CLI::IsMember({"full", "test_split"}));
  transfer->add_option("--fraction", tx.fraction, "Target split fraction");
  transfer->add_option("--seed", tx.seed, "Target split seed");
  transfer->add_option("--out-dir", tx.out_dir, "Write csv, markdown and provenance here");
  transfer->add_option("--stem", tx.stem);
  transfer->add_option("--format", tx.format)->check(CLI::IsMember({"csv", "markdown"}));
  transfer->callback([&] {
    experiments::ExperimentConfig c;
    if (tx.config) {
      c = experiments::load_experiment(*tx.config);
    } else {
      if (!tx.model || !tx.eval_corpus) {
        throw ValidationError("transfer needs --config, or --model with --eval");
      }
      const auto h = modelzoo::load_model(*tx.model);
      c.name = "transfer";
      c.protocol = experiments::protocol_from_string(tx.protocol);
      // The source corpus is not needed when the model is given; the ref
      // only has to differ from the target.
      c.train_corpus.path = "model:" + fs::absolute(*tx.model).string();
      c.eval_corpus = experiments::CorpusRef{};
      c.eval_corpus->path = fs::absolute(*tx.eval_corpus).string();
      experiments::ModelEntry e;
      e.name = h.model_id;
      e.spec = h.spec;
      e.model_path = fs::absolute(*tx.model).string();
      if (c.protocol == experiments::Protocol::kFineTuned) {
        if (!tx.fine_tune_preset) throw ValidationError("fine_tuned transfer needs --fine-tune-preset");
        e.fine_tune = experiments::load_preset(*tx.fine_tune_preset).for_family(h.spec.family).training;
      }
      c.model_matrix.push_back(e);
      c.split_fraction = tx.fraction;
      c.seed = tx.seed;
      c.eval_subset = tx.subset == "full" ? experiments::EvalSubset::kFull
                                          : experiments::EvalSubset::kTestSplit;
    }
    emit_results(experiments::run_transfer(c), tx.format, tx.out_dir, tx.stem, out);
  });

  // report
  struct {
    std::string config, format = "csv";
    std::optional<std::string> out_dir, stem;
  } rp;
  auto* report = app.add_subcommand("report", "Run an experiment config end to end and emit its table");
  report->add_option("--config", rp.config, "Experiment JSON")->required();
  report->add_option("--out-dir", rp.out_dir, "Write csv, markdown and provenance here");
  report->add_option("--stem", rp.stem, "Output file stem (default: experiment name)");
  report->add_option("--format", rp.format)->check(CLI::IsMember({"csv", "markdown"}));
  report->callback([&] {
    const auto c = experiments::load_experiment(rp.config);
    emit_results(experiments::run_experiment(c), rp.format, rp.out_dir, rp.stem.value_or(c.name), out);
  });

  // annotate-serve and serve share the campaign flags
  struct Campaign {
    std::optional<std::string> items, votes, export_path;
    int required_votes = 5, max_dissent = 1;
    std::string source = "user";
  };
  auto add_campaign = [](CLI::App* cmd, Campaign& c, bool items_required) {
    auto* o = cmd->add_option("--items", c.items, "Annotation items JSONL");
    if (items_required) o->required();
    cmd->add_option("--votes", c.votes, "Append-only vote log (replayed on start)");
    cmd->add_option("--required-votes", c.required_votes);
    cmd->add_option("--max-dissent", c.max_dissent);
    cmd->add_option("--export", c.export_path, "Write consensus examples here on shutdown");
    cmd->add_option("--source", c.source, "Source tag for exported examples");
  };
  auto open_store = [](const Campaign& c) -> std::unique_ptr<annotation::AnnotationStore> {
    if (!c.items) return nullptr;
    return std::make_unique<annotation::AnnotationStore>(
        annotation::load_items(*c.items), annotation::ConsensusPolicy(c.required_votes, c.max_dissent),
        c.votes);
  };
  auto close_store = [&err](const Campaign& c, const annotation::AnnotationStore* store) {
    if (!store || !c.export_path) return;
    const auto xs = store->consensus_examples(source_from(c.source));
    corpus::save_examples(xs, *c.export_path);
    err << "exported " << xs.size() << " consensus examples to " << *c.export_path << "\n";
  };

  Campaign ac;
  std::string a_host = "127.0.0.1";
  std::optional<int> a_port;
  auto* aserve = app.add_subcommand("annotate-serve", "Serve the annotation API");
  add_campaign(aserve, ac, true);
  aserve->add_option("--host", a_host);
  aserve->add_option("--port", a_port, "Default: NORMPRIOR_PORT or 8080; 0 picks a free port");
  aserve->callback([&] {
    source_from(ac.source);
    auto store = open_store(ac);
    service::Service svc({}, std::nullopt, store.get());
    httplib::Server server;
    svc.mount(server);
    serve_until_stopped(server, a_host, a_port.value_or(env_port()), err);
    close_store(ac, store.get());
  });

  Campaign sc;
  std::optional<std::string> model_dir, default_model;
  std::vector<std::string> model_files;
  std::string s_host = "127.0.0.1";
  std::optional<int> s_port;
  auto* serve = app.add_subcommand("serve", "Serve /score (and the annotation API when --items is given)");
  serve->add_option("--model-dir", model_dir, "Default: NORMPRIOR_MODEL_DIR");
  serve->add_option("--model", model_files, "Extra model artifact(s)");
  serve->add_option("--default-model", default_model);
  serve->add_option("--host", s_host);
  serve->add_option("--port", s_port, "Default: NORMPRIOR_PORT or 8080; 0 picks a free port");
  add_campaign(serve, sc, false);
  serve->callback([&] {
    source_from(sc.source);
    service::ModelRegistry models;
    if (!model_dir) {
      if (const char* env = std::getenv("NORMPRIOR_MODEL_DIR"); env && *env) model_dir = env;
    }
    if (model_dir) models = service::load_model_dir(*model_dir);
    for (const auto& f : model_files) {
      auto h = modelzoo::load_model(f);
      const std::string id = h.model_id;
      if (!models.emplace(id, std::move(h)).second) {
        throw ValidationError("model id '" + id + "' is loaded twice");
      }
    }
    if (models.empty()) throw ValidationError("no models to serve (set --model-dir or NORMPRIOR_MODEL_DIR)");
    auto store = open_store(sc);
    service::Service svc(std::move(models), default_model, store.get());
    svc.verify_digests();
    print_digests(err, "startup", svc.digests());
    httplib::Server server;
    svc.mount(server);
    serve_until_stopped(server, s_host, s_port.value_or(env_port()), err);
    const auto after = svc.digests();
    print_digests(err, "shutdown", after);
    svc.verify_digests();
    close_store(sc, store.get());
  });

  if (args.empty()) {
    err << app.help();
    return 1;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace normprior::cli
