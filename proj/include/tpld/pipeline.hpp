#pragma once

// End-to-end runs: data preparation, staged pre-training, fine-tuning with
// best-epoch selection, test evaluation, and the gamma sweep.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tpld/config.hpp"
#include "tpld/corpus.hpp"
#include "tpld/eval.hpp"
#include "tpld/tokenizer.hpp"
#include "tpld/trainer.hpp"

namespace tpld {

std::string build_id();

struct PreparedData {
  Corpus corpus;
  Database database;
  Ontology ontology;
  CorpusSplit split;
  Vocabulary vocab;
  ModelConfig model;  // cfg.model with vocab_size filled in
};

// Synthesizes (or loads data.corpus with ontology.json and database.json
// beside it), splits, and builds the vocabulary over the whole corpus.
PreparedData prepare_data(const RunConfig& cfg);

// corpus.jsonl, ontology.json, database.json, vocab.txt
void write_data(const PreparedData& data, const std::filesystem::path& dir);
PreparedData read_data(const RunConfig& cfg, const std::filesystem::path& dir);

struct PretrainResult {
  TrainState state;
  std::optional<double> stage1_belief_accuracy;  // held-out, after stage 1
  std::vector<std::filesystem::path> checkpoints;
};

// Runs the mode's schedule from a fresh initialization. With `out`, writes
// one checkpoint per phase (pretrain_<tag>.ckpt) and appends to the log's file.
PretrainResult pretrain(const RunConfig& cfg, const PreparedData& data, MetricsLog& log,
                        const std::optional<std::filesystem::path>& out = std::nullopt);

// Leading share of the sessions, at least one.
Corpus leading_fraction(const Corpus& corpus, double fraction);

struct FinetuneResult {
  Weights<float> best;
  std::size_t best_epoch = 0;
  std::vector<double> valid_combined;  // one per epoch
};

// Optimizes the fine-tuning objective and keeps the epoch with the highest
// validation Combined score (ties keep the earlier epoch).
FinetuneResult finetune(const RunConfig& cfg, const PreparedData& data, const Weights<float>& init, MetricsLog& log);

struct ExperimentResult {
  EvalReport test;
  double valid_combined = 0.0;
  std::size_t best_epoch = 0;
  std::optional<double> stage1_belief_accuracy;
  std::vector<MetricRecord> metrics;
};

// prepare -> pretrain -> finetune -> test evaluation. With `out`, every
// artifact lands in that directory.
ExperimentResult run_experiment(const RunConfig& cfg, const std::optional<std::filesystem::path>& out = std::nullopt);

struct SweepRow {
  double gamma = 0.0;
  ExperimentResult result;
};

std::vector<SweepRow> gamma_sweep(const RunConfig& cfg, const std::vector<double>& gammas,
                                  const std::optional<std::filesystem::path>& out = std::nullopt);
std::string sweep_table(const std::vector<SweepRow>& rows);  // tab-separated, with header

struct Manifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string build;
  std::string config;  // RunConfig::dump()
  std::vector<std::string> args;

  std::string to_json() const;
};

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace tpld
