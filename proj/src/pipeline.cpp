#include "tpld/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "tpld/error.hpp"
#include "tpld/log.hpp"
#include "tpld/sampler.hpp"

#ifndef TPLD_BUILD_ID
#define TPLD_BUILD_ID "unknown"
#endif

namespace tpld {

namespace fs = std::filesystem;
using nlohmann::json;

std::string build_id() { return TPLD_BUILD_ID; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

namespace {

PreparedData finish(const RunConfig& cfg, Corpus corpus, Database db, Ontology ontology,
                    std::optional<Vocabulary> vocab = std::nullopt) {
  PreparedData d;
  d.corpus = std::move(corpus);
  d.database = std::move(db);
  d.ontology = std::move(ontology);
  d.split = split_corpus(d.corpus, cfg.valid_fraction, cfg.test_fraction);
  if (d.split.train.empty()) throw DataError("training split is empty");
  // Built from every split so test dialogs never hit <unk>; the corpus is
  // templated, so this only adds a few entity values.
  d.vocab = vocab ? std::move(*vocab) : build_vocab(d.corpus);
  d.model = cfg.model;
  d.model.vocab_size = d.vocab.size();
  d.model.seed = cfg.train.seed;
  d.model.validate();
  return d;
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg) {
  if (!cfg.corpus_path.empty()) {
    const fs::path p(cfg.corpus_path);
    const auto dir = p.parent_path();
    return finish(cfg, load_corpus(p), load_database(dir / "database.json"), load_ontology(dir / "ontology.json"));
  }
  auto world = synthesize_corpus(cfg.synth);
  return finish(cfg, std::move(world.corpus), std::move(world.database), std::move(world.ontology));
}

void write_data(const PreparedData& data, const fs::path& dir) {
  fs::create_directories(dir);
  save_corpus(data.corpus, dir / "corpus.jsonl");
  save_ontology(data.ontology, dir / "ontology.json");
  save_database(data.database, dir / "database.json");
  data.vocab.save(dir / "vocab.txt");
}

PreparedData read_data(const RunConfig& cfg, const fs::path& dir) {
  return finish(cfg, load_corpus(dir / "corpus.jsonl"), load_database(dir / "database.json"),
                load_ontology(dir / "ontology.json"), Vocabulary::load(dir / "vocab.txt"));
}

PretrainResult pretrain(const RunConfig& cfg, const PreparedData& data, MetricsLog& log,
                        const std::optional<fs::path>& out) {
  PretrainResult r;
  r.state.weights = init_weights<float>(data.model, cfg.train.seed);
  const auto schedule = make_schedule(cfg);
  if (schedule.phases.empty()) return r;

  const Dataset train = make_dataset(data.split.train, data.vocab, data.model);
  const auto index = build_policy_index(data.split.train, cfg.train.granularity);
  const auto ctx = batch_context(train, &index, cfg.train);
  const auto hash = config_hash(data.model, data.vocab);
  StageHooks hooks;
  if (out) hooks.snapshot_dir = *out;

  for (const auto& spec : schedule.phases) {
    const auto tag = phase_tag(spec.phase);
    log::info("pretrain: " + tag + " for " + std::to_string(spec.epochs) + " epochs");
    run_stage(spec, ctx, r.state, cfg.train.seed, log, hooks);
    if (spec.phase == Phase::kStage1) {
      const auto& held_out = data.split.valid.empty() ? data.split.test : data.split.valid;
      if (!held_out.empty()) {
        r.stage1_belief_accuracy = belief_token_accuracy(r.state.weights, make_dataset(held_out, data.vocab, data.model));
      }
    }
    if (out) {
      const auto path = *out / ("pretrain_" + tag + ".ckpt");
      save_checkpoint(r.state, hash, tag, path);
      r.checkpoints.push_back(path);
    }
  }
  return r;
}

Corpus leading_fraction(const Corpus& corpus, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("finetune.fraction must be in (0, 1]");
  if (corpus.empty()) return {};
  auto n = static_cast<std::size_t>(fraction * static_cast<double>(corpus.size()) + 1e-9);
  n = std::clamp<std::size_t>(n, 1, corpus.size());
  return Corpus(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(n));
}

FinetuneResult finetune(const RunConfig& cfg, const PreparedData& data, const Weights<float>& init, MetricsLog& log) {
  if (init.config.canonical() != data.model.canonical()) {
    throw UsageError("finetune: checkpoint model does not match the configured model and vocabulary");
  }
  const Dataset train = make_dataset(leading_fraction(data.split.train, cfg.finetune.fraction), data.vocab, data.model);
  const auto ctx = batch_context(train, nullptr, cfg.train);
  const auto& valid = data.split.valid.empty() ? data.split.train : data.split.valid;

  TrainState state;
  state.weights = init.clone();
  auto spec = finetune_phase(cfg);
  const std::size_t epochs = spec.epochs;
  FinetuneResult r;
  r.best = init.clone();
  double best = -1.0;
  for (std::size_t e = 0; e < epochs; ++e) {
    // One epoch at a time; run_stage resumes the phase where it stopped.
    spec.epochs = e + 1;
    run_stage(spec, ctx, state, cfg.train.seed, log);
    const auto report = evaluate_model(state.weights, data.vocab, valid, data.database, data.ontology, cfg.eval);
    r.valid_combined.push_back(report.combined);
    log.append({"finetune", e, "valid_combined", report.combined});
    if (report.combined > best) {
      best = report.combined;
      r.best_epoch = e;
      r.best = state.weights.clone();
    }
  }
  return r;
}

ExperimentResult run_experiment(const RunConfig& cfg, const std::optional<fs::path>& out) {
  const auto data = prepare_data(cfg);
  std::optional<MetricsLog> file_log;
  if (out) {
    write_data(data, *out / "data");
    const auto metrics = *out / "metrics.jsonl";
    fs::remove(metrics);
    file_log.emplace(metrics);
  }
  MetricsLog mem;
  MetricsLog& log = file_log ? *file_log : mem;

  auto pre = pretrain(cfg, data, log, out);
  auto ft = finetune(cfg, data, pre.state.weights, log);
  if (out) {
    TrainState best;
    best.weights = ft.best.clone();
    best.phase_tag = "finetune";
    best.epoch = ft.best_epoch + 1;
    save_checkpoint(best, config_hash(data.model, data.vocab), "finetune", *out / "finetune.ckpt");
  }

  std::vector<DialogRun> runs;
  ExperimentResult r;
  r.test = evaluate_model(ft.best, data.vocab, data.split.test, data.database, data.ontology, cfg.eval, &runs);
  r.valid_combined = ft.valid_combined.at(ft.best_epoch);
  r.best_epoch = ft.best_epoch;
  r.stage1_belief_accuracy = pre.stage1_belief_accuracy;
  r.metrics = log.records();
  if (out) {
    write_text(*out / "eval_report.json", r.test.to_json() + "\n");
    write_text(*out / "eval_report.txt", r.test.to_table());
    write_text(*out / "predictions.jsonl", prediction_dump(runs));
  }
  return r;
}

namespace {

std::string gamma_label(double g) {
  std::ostringstream ss;
  ss << g;
  return ss.str();
}

}  // namespace

std::vector<SweepRow> gamma_sweep(const RunConfig& cfg, const std::vector<double>& gammas,
                                  const std::optional<fs::path>& out) {
  std::vector<SweepRow> rows;
  for (double g : gammas) {
    if (!(g >= 0.0 && g <= 1.0)) throw UsageError("gamma must be in [0, 1], got " + gamma_label(g));
    RunConfig c = cfg;
    c.train.coef.gamma = g;
    std::optional<fs::path> dir;
    if (out) dir = *out / ("gamma_" + gamma_label(g));
    log::info("sweep: gamma " + gamma_label(g));
    rows.push_back({g, run_experiment(c, dir)});
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream ss;
  ss << "gamma\tbleu\tinform\tsuccess\tcombined\tvalid_combined\tbest_epoch\n";
  ss << std::fixed << std::setprecision(4);
  for (const auto& row : rows) {
    const auto& t = row.result.test;
    ss << gamma_label(row.gamma) << '\t' << t.bleu << '\t' << t.inform << '\t' << t.success << '\t' << t.combined
       << '\t' << row.result.valid_combined << '\t' << row.result.best_epoch << '\n';
  }
  return ss.str();
}

std::string Manifest::to_json() const {
  json j;
  j["command"] = command;
  j["config_path"] = config_path;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["build"] = build;
  j["config"] = config;
  j["args"] = args;
  return j.dump(2) + "\n";
}

}  // namespace tpld
