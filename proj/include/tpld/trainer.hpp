#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpld/autodiff.hpp"
#include "tpld/config.hpp"
#include "tpld/model.hpp"
#include "tpld/objectives.hpp"
#include "tpld/sampler.hpp"
#include "tpld/tokenizer.hpp"

namespace tpld {

// ---------------------------------------------------------------------------
// Encoded data
// ---------------------------------------------------------------------------
struct EncodedSample {
  std::vector<TokenId> context;  // includes the trailing <eos>, left-truncated
  std::vector<TokenId> target;   // belief, act and response segments
  std::size_t belief_len = 0;    // target prefix ending at <eos_belief>
  std::size_t belief_act_len = 0;  // target prefix ending at <eos_act>
};

struct Dataset {
  Corpus corpus;
  std::vector<std::vector<EncodedSample>> samples;  // [session][turn]

  const EncodedSample& at(const SampleRef& r) const { return samples.at(r.session).at(r.turn); }
  std::size_t turn_count() const;
};

// Throws DataError when a target does not fit the model's max_target.
Dataset make_dataset(const Corpus& corpus, const Vocabulary& vocab, const ModelConfig& model);

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------
enum class Phase { kStage1, kStage2, kStage3, kMultitask, kFinetune };

std::string phase_tag(Phase p);  // "stage1", "stage2", "stage3", "multitask", "finetune"

struct PhaseSpec {
  Phase phase = Phase::kStage1;
  std::size_t epochs = 1;
  double lr = 5e-4;
  std::size_t batch_size = 16;
  LossCoefficients coef;
  AuxTerms aux;
  bool with_belief = true;  // fine-tuning only
  bool with_act = true;     // fine-tuning only
  bool reset_optimizer = true;  // fresh Adam moments when the phase starts

  // Stage 2 and multi-task batches hold whole sessions.
  bool session_grouped() const { return phase == Phase::kStage2 || phase == Phase::kMultitask; }
  bool contrastive() const { return session_grouped() && aux.acl; }
};

struct StageSchedule {
  std::vector<PhaseSpec> phases;  // empty for no_pretrain
};

StageSchedule make_schedule(const RunConfig& cfg);
PhaseSpec finetune_phase(const RunConfig& cfg);

// Batches for one epoch in a deterministic shuffled order. Session-grouped
// batches pack whole sessions up to batch_size turns (at least one session).
std::vector<std::vector<SampleRef>> plan_batches(const Dataset& data, bool session_grouped, std::size_t batch_size,
                                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// Batch objective
// ---------------------------------------------------------------------------
struct BatchContext {
  const Dataset* data = nullptr;
  const PolicyIndex* index = nullptr;  // required for contrastive phases
  GenReduction reduction = GenReduction::kMean;
  bool acl_mean = true;
  bool posterior_stop_grad = false;
  std::size_t sampler_m = 2;
  bool symmetrize_positives = false;
};

BatchContext batch_context(const Dataset& data, const PolicyIndex* index, const TrainConfig& train);

// Forward passes and loss composition for one batch under `spec`.
template <typename T>
LossBundle<T> batch_loss(const Weights<T>& w, const BatchContext& ctx, const PhaseSpec& spec,
                         std::span<const SampleRef> base, Rng& sampler_rng, Rng* dropout_rng = nullptr);

// ---------------------------------------------------------------------------
// Training state, metrics and checkpoints
// ---------------------------------------------------------------------------
struct MetricRecord {
  std::string stage;
  std::size_t epoch = 0;
  std::string term;
  double value = 0.0;
  bool operator==(const MetricRecord&) const = default;
};

std::string metric_line(const MetricRecord& r);  // one JSON object, no newline

// Collects records and, when given a path, appends each one to that file.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);
  void append(const MetricRecord& r);
  const std::vector<MetricRecord>& records() const { return records_; }

 private:
  std::vector<MetricRecord> records_;
  std::optional<std::filesystem::path> path_;
};

struct TrainState {
  Weights<float> weights;
  ad::AdamState<float> adam;
  std::string phase_tag;       // phase currently running
  std::size_t epoch = 0;       // next epoch to run within the phase
  std::size_t batch = 0;       // next batch within the epoch
  std::uint64_t step = 0;      // optimizer steps taken in total
  std::map<std::string, double> epoch_sums;  // per-term sums over finished batches of this epoch
  std::size_t epoch_batches = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Hash of everything a checkpoint must agree with to be loadable.
std::uint64_t config_hash(const ModelConfig& model, const Vocabulary& vocab);

void save_checkpoint(const TrainState& state, std::uint64_t config_hash, const std::string& stage_tag,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  TrainState state;
  std::string stage_tag;
  std::uint64_t config_hash = 0;
};

// Throws DataError on a bad header or version, UsageError on a hash mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& model,
                                 std::optional<std::uint64_t> expected_hash = std::nullopt);

// ---------------------------------------------------------------------------
// Stage loop
// ---------------------------------------------------------------------------
struct StageHooks {
  // Called after each optimizer step; returning true pauses the phase (the
  // state is left ready to resume).
  std::function<bool(const TrainState&)> pause_after_step;
  // Directory for a diagnostic snapshot when the loss goes non-finite.
  std::optional<std::filesystem::path> snapshot_dir;
};

// One optimizer step on `total`.
void train_step(Weights<float>& w, ad::AdamState<float>& adam, const ad::Tensor<float>& total, double lr);

// Runs (or resumes) every remaining epoch of `spec`. Returns false when paused.
bool run_stage(const PhaseSpec& spec, const BatchContext& ctx, TrainState& state, std::uint64_t seed,
               MetricsLog& log, const StageHooks& hooks = {});

// Teacher-forced argmax accuracy over belief-segment target tokens.
template <typename T>
double belief_token_accuracy(const Weights<T>& w, const Dataset& data);

}  // namespace tpld
