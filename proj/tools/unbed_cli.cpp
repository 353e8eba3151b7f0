// Command-line front end: gen-data, train, score, eval, ablate.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "unbed/unbed.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace unbed;

namespace {

constexpr const char* kOutDirEnv = "UNBED_OUT_DIR";

std::string default_out_dir() {
  const char* v = std::getenv(kOutDirEnv);
  return v && *v ? std::string(v) : std::string();
}

/// `flag` when given, otherwise `fallback_name` under the default output
/// directory.
std::string resolve_out(const std::string& flag, const std::string& fallback_name) {
  if (!flag.empty()) return flag;
  const auto dir = default_out_dir();
  require(!dir.empty(), "invalid_input", std::string("--out is required when ") + kOutDirEnv + " is unset");
  return fallback_name.empty() ? dir : (fs::path(dir) / fallback_name).string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::ofstream open_out(const std::string& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io", "cannot write '" + path + "'");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  require(out.good(), "io", "write to '" + path + "' failed");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_same_schema(const Corpus& a, const Corpus& b, const std::string& what) {
  require(a.vocab.entity_types() == b.vocab.entity_types() && a.vocab.relation_types() == b.vocab.relation_types(),
          "invalid_input", what + " declares different entity or relation types than the training corpus");
}

void require_model_schema(const JointModel& m, const Corpus& c) {
  require(m.tags().entity_types() == c.vocab.entity_types() && m.tags().relation_types() == c.vocab.relation_types(),
          "invalid_input", "corpus types do not match the checkpoint's tag vocabulary");
}

/// Training data loaded from a corpus file and its optional provenance sidecar.
struct TrainingData {
  Corpus corpus;
  std::optional<ProvenanceTable> provenance;
  std::vector<Instance> instances;
  std::vector<Example> examples;
  std::vector<Provenance> flags;
  TokenVocabulary tokens;
};

TrainingData load_training(const std::string& path) {
  TrainingData d;
  d.corpus = load_corpus(path);
  d.provenance = load_provenance_if_present(path, d.corpus.vocab);
  d.instances = build_corpus_instances(d.corpus, d.provenance ? &*d.provenance : nullptr);
  require(!d.instances.empty(), "invalid_input", "corpus '" + path + "' yields no training instances");
  d.tokens = training_vocabulary(d.instances);
  d.examples = to_examples(d.instances, d.tokens);
  for (const auto& i : d.instances) d.flags.push_back(i.provenance);
  return d;
}

/// Hyper-parameters shared by train and ablate.
struct TrainFlags {
  double alpha = 1.0;
  double tau_d = 0.5;
  double tau_m = 0.6;
  std::size_t k = 8;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  std::size_t width = 16;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double dropout = 0.1;
  unsigned threads = 1;

  void add_to(CLI::App* app) {
    app->add_option("--alpha", alpha, "ensemble loss weight (ensembled variants)")->capture_default_str();
    app->add_option("--tau-d", tau_d, "data-uncertainty threshold")->capture_default_str();
    app->add_option("--tau-m", tau_m, "model-uncertainty threshold")->capture_default_str();
    app->add_option("--k", k, "Monte Carlo dropout passes")->capture_default_str();
    app->add_option("--epochs", epochs, "maximum epochs")->capture_default_str();
    app->add_option("--patience", patience, "epochs without validation gain before stopping")
        ->capture_default_str();
    app->add_option("--width", width, "encoder width")->capture_default_str();
    app->add_option("--batch-size", batch_size, "mini-batch size")->capture_default_str();
    app->add_option("--lr", learning_rate, "Adam learning rate")->capture_default_str();
    app->add_option("--dropout", dropout, "dropout rate")->capture_default_str();
    app->add_option("--threads", threads, "worker threads for scoring")->capture_default_str();
  }

  TrainConfig config() const {
    TrainConfig c;
    c.alpha = alpha;
    c.tau_d = tau_d;
    c.tau_m = tau_m;
    c.mc_passes = k;
    c.max_epochs = epochs;
    c.patience = patience;
    c.width = width;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.dropout_rate = dropout;
    c.threads = threads;
    return c;
  }
};

/// Trains one variant and writes its artifacts into `dir`. Returns the run.
VariantRun train_into(const std::string& dir, Variant variant, const TrainingData& d,
                      const std::vector<Sentence>& validation, const TrainConfig& base, std::uint64_t seed,
                      const ordered_json& inputs) {
  fs::create_directories(dir);
  auto cfg = with_run_seed(base, seed);
  cfg.validate();
  TrainHooks hooks;
  const bool audited = std::all_of(d.flags.begin(), d.flags.end(), [](Provenance p) { return p != Provenance::unknown; });
  if (audited) hooks.clean_flags = &d.flags;
  std::vector<std::string> warnings;
  hooks.warn = [&](const std::string& w) {
    warnings.push_back(w);
    std::cerr << "warning: " << w << '\n';
  };
  auto run = run_variant(variant, d.tokens, d.corpus.vocab, d.examples, validation, cfg, hooks);

  write_text((fs::path(dir) / "metrics.jsonl").string(), metrics_jsonl(run.log));
  const auto hash = run.config.fingerprint();
  save_checkpoint(run.best, (fs::path(dir) / "best.ckpt.json").string(), hash);
  save_checkpoint(run.last, (fs::path(dir) / "last.ckpt.json").string(), hash);
  if (run.best_second) save_checkpoint(*run.best_second, (fs::path(dir) / "best_second.ckpt.json").string(), hash);

  std::optional<std::vector<AuditRow>> audit;
  if (run.selection) {
    audit = selection_audit(*run.selection, d.flags);
    auto out = open_out((fs::path(dir) / "selection_audit.csv").string());
    write_selection_audit_csv(out, *run.selection, audit);
  }

  ordered_json meta = {{"variant", to_string(variant)},
                       {"seed", seed},
                       {"config", run.config.to_json()},
                       {"config_hash", hex64(hash)},
                       {"inputs", inputs},
                       {"instances", d.examples.size()},
                       {"best_epoch", run.best_epoch},
                       {"epochs_run", run.log.size()},
                       {"warnings", warnings}};
  if (audit && !audit->empty()) meta["final_enrichment"] = audit->back().enrichment;
  write_text((fs::path(dir) / "run.json").string(), meta.dump(2) + "\n");
  return run;
}

int cmd_gen_data(const std::string& grammar_path, std::size_t size, double noise_rel, double noise_ent,
                 std::uint64_t seed, const std::string& out_flag, const std::string& prefix) {
  const auto grammar = grammar_path.empty() ? default_grammar() : load_grammar(grammar_path);
  const auto out = resolve_out(out_flag, "corpus.jsonl");
  ensure_parent(out);
  const auto clean = generate_corpus(grammar, size, seed, prefix);
  auto noisy = inject_noise(clean, {noise_rel, noise_ent, derive_seed(seed, 0x6e6f697365)});
  save_corpus(noisy.corpus, out);
  save_provenance(noisy.provenance, noisy.corpus.vocab, provenance_path_for(out));
  std::size_t corrupted = 0;
  for (const auto& [id, p] : noisy.provenance) corrupted += p.status == Provenance::corrupted;
  ordered_json summary = {{"corpus", out},
                          {"provenance", provenance_path_for(out)},
                          {"sentences", size},
                          {"corrupted_sentences", corrupted},
                          {"seed", seed},
                          {"noise_rel", noise_rel},
                          {"noise_ent", noise_ent}};
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_train(const std::string& corpus, const std::string& val, const std::string& variant_name,
              const TrainFlags& flags, std::uint64_t seed, const std::string& out_flag) {
  const auto out = resolve_out(out_flag, "");
  const auto variant = variant_from_string(variant_name);
  const auto data = load_training(corpus);
  const auto validation = load_corpus(val);
  require_same_schema(data.corpus, validation, "validation corpus");
  ordered_json inputs = {{"corpus", corpus}, {"val", val}};
  const auto run = train_into(out, variant, data, validation.sentences, flags.config(), seed, inputs);
  ordered_json summary = {{"out", out}, {"variant", variant_name}, {"seed", seed}, {"best_epoch", run.best_epoch}};
  if (!run.log.empty()) summary["best_val_f1"] = run.log.at(run.best_epoch - 1).val_f1;
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_score(const std::string& corpus_path, const std::string& model_path, const std::string& kind_name,
              std::size_t k, double dropout, std::uint64_t seed, unsigned threads, const std::string& out_flag) {
  const auto kind = uncertainty_kind_from_string(kind_name);
  require(k >= 2, "invalid_input", "K must be at least 2");
  const auto model = load_checkpoint(model_path);
  const auto corpus = load_corpus(corpus_path);
  require_model_schema(model, corpus);
  const auto prov = load_provenance_if_present(corpus_path, corpus.vocab);
  const auto instances = build_corpus_instances(corpus, prov ? &*prov : nullptr);
  const auto examples = to_examples(instances, model.tokens());
  ScoreOptions opt;
  opt.mc = {k, seed, dropout};
  opt.threads = threads;
  const auto scores = score_dataset(model, examples, kind, opt);
  std::map<std::string, Provenance> by_id;
  for (const auto& i : instances) by_id[i.id] = i.provenance;
  const auto out = resolve_out(out_flag, "scores.csv");
  auto file = open_out(out);
  write_scores_csv(file, scores, by_id);
  std::cout << ordered_json{{"out", out}, {"kind", kind_name}, {"instances", scores.size()}, {"seed", seed}}.dump()
            << '\n';
  return 0;
}

int cmd_eval(const std::string& corpus_path, const std::string& model_path, const std::string& out_flag) {
  const auto model = load_checkpoint(model_path);
  const auto corpus = load_corpus(corpus_path);
  require_model_schema(model, corpus);
  const auto report = evaluate(model, corpus.sentences);
  const auto out = resolve_out(out_flag, "eval.json");
  auto j = report_json(report);
  j["corpus"] = corpus_path;
  j["model"] = model_path;
  write_text(out, j.dump(2) + "\n");
  print_report_table(std::cout, report);
  return 0;
}

int cmd_ablate(const std::string& corpus, const std::string& val, const std::string& matrix,
               const TrainFlags& flags, const std::vector<std::uint64_t>& seeds, const std::string& out_flag) {
  require(matrix == "default", "invalid_input", "unknown ablation matrix '" + matrix + "'");
  require(!seeds.empty(), "invalid_input", "at least one seed is required");
  const auto out = resolve_out(out_flag, "");
  const auto data = load_training(corpus);
  const auto validation = load_corpus(val);
  require_same_schema(data.corpus, validation, "validation corpus");
  ordered_json inputs = {{"corpus", corpus}, {"val", val}, {"matrix", matrix}};

  fs::create_directories(out);
  auto curve = open_out((fs::path(out) / "ablation.csv").string());
  curve << "variant,seed,epoch,C,val_precision,val_recall,val_f1\n";
  auto summary = open_out((fs::path(out) / "summary.csv").string());
  summary << "variant,seed,best_epoch,best_val_f1,final_enrichment\n";
  for (auto seed : seeds) {
    for (auto v : kAllVariants) {
      const auto dir = (fs::path(out) / (std::string(to_string(v)) + "-seed" + std::to_string(seed))).string();
      const auto run = train_into(dir, v, data, validation.sentences, flags.config(), seed, inputs);
      for (const auto& m : run.log)
        curve << to_string(v) << ',' << seed << ',' << m.epoch << ',' << m.trained_on << ',' << fmt(m.val_precision)
              << ',' << fmt(m.val_recall) << ',' << fmt(m.val_f1) << '\n';
      std::string enrichment;
      if (run.selection)
        if (auto a = selection_audit(*run.selection, data.flags); a && !a->empty()) enrichment = fmt(a->back().enrichment);
      summary << to_string(v) << ',' << seed << ',' << run.best_epoch << ','
              << fmt(run.log.empty() ? 0.0 : run.log.at(run.best_epoch - 1).val_f1) << ',' << enrichment << '\n';
      std::cerr << "done " << to_string(v) << " seed " << seed << '\n';
    }
  }
  std::cout << ordered_json{{"out", out}, {"runs", seeds.size() * kAllVariants.size()}}.dump() << '\n';
  return 0;
}

int fail(const std::string& code, const std::string& message, int status) {
  std::cerr << ordered_json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware bootstrap learning for joint entity and relation extraction"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML or INI file with the same keys as the flags; flags take precedence");
  app.footer(std::string("Environment: ") + kOutDirEnv + " sets the default output location when --out is omitted.");

  std::string out, corpus, val, model;
  std::uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic noisy corpus and its provenance sidecar");
  std::string grammar, prefix = "s";
  std::size_t size = 1000;
  double noise_rel = 0.0, noise_ent = 0.0;
  gen->add_option("--grammar", grammar, "grammar JSON (default: built-in grammar)");
  gen->add_option("--size", size, "number of sentences")->capture_default_str();
  gen->add_option("--noise-rel", noise_rel, "relation noise rate")->capture_default_str();
  gen->add_option("--noise-ent", noise_ent, "entity noise rate")->capture_default_str();
  gen->add_option("--seed", seed, "generator seed")->capture_default_str();
  gen->add_option("--id-prefix", prefix, "sentence id prefix")->capture_default_str();
  gen->add_option("--out", out, "output corpus path");

  TrainFlags train_flags;
  std::string variant = "ws-pv-ensembled";
  auto* train = app.add_subcommand("train", "train one variant");
  train->add_option("--corpus", corpus, "training corpus")->required();
  train->add_option("--val", val, "validation corpus")->required();
  train->add_option("--variant", variant, "baseline|ws-pv|entropy-pv|ws-pv-ensembled|entropy-pv-ensembled")
      ->capture_default_str();
  train->add_option("--seed", seed, "run seed")->capture_default_str();
  train->add_option("--out", out, "output directory");
  train_flags.add_to(train);

  std::string kind = "pv";
  std::size_t k = 8;
  double dropout = 0.1;
  unsigned threads = 1;
  auto* score = app.add_subcommand("score", "write per-instance uncertainty scores");
  score->add_option("--corpus", corpus, "corpus to score")->required();
  score->add_option("--model", model, "checkpoint")->required();
  score->add_option("--kind", kind, "ws|entropy|pv")->capture_default_str();
  score->add_option("--k", k, "Monte Carlo dropout passes (pv)")->capture_default_str();
  score->add_option("--dropout", dropout, "dropout rate (pv)")->capture_default_str();
  score->add_option("--seed", seed, "dropout seed (pv)")->capture_default_str();
  score->add_option("--threads", threads, "worker threads")->capture_default_str();
  score->add_option("--out", out, "output CSV path");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  eval->add_option("--corpus", corpus, "evaluation corpus")->required();
  eval->add_option("--model", model, "checkpoint")->required();
  eval->add_option("--out", out, "output JSON path");

  TrainFlags ablate_flags;
  std::string matrix = "default";
  std::vector<std::uint64_t> seeds = {1};
  auto* ablate = app.add_subcommand("ablate", "train the baseline and all four variants under shared seeds");
  ablate->add_option("--corpus", corpus, "training corpus")->required();
  ablate->add_option("--val", val, "validation corpus")->required();
  ablate->add_option("--matrix", matrix, "variant matrix")->capture_default_str();
  ablate->add_option("--seeds", seeds, "run seeds")->capture_default_str()->delimiter(',');
  ablate->add_option("--out", out, "output directory");
  ablate_flags.add_to(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*gen) return cmd_gen_data(grammar, size, noise_rel, noise_ent, seed, out, prefix);
    if (*train) return cmd_train(corpus, val, variant, train_flags, seed, out);
    if (*score) return cmd_score(corpus, model, kind, k, dropout, seed, threads, out);
    if (*eval) return cmd_eval(corpus, model, out);
    if (*ablate) return cmd_ablate(corpus, val, matrix, ablate_flags, seeds, out);
  } catch (const Error& e) {
    return fail(e.code(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
