#pragma once

// Run configuration: a flat "section.key = value" text file layered over a
// named preset. See docs/config.md for every key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tpld/corpus.hpp"
#include "tpld/model.hpp"
#include "tpld/objectives.hpp"

namespace tpld {

enum class Mode { kTpld, kMultitask, kTpldWoAcl, kTpldWoSession, kTpldWoGpc, kNoPretrain };

Mode parse_mode(std::string_view s);
std::string to_string(Mode m);

enum class GenReduction { kMean, kSum };
enum class BleuSmoothing { kNone, kMethod1 };

struct TrainConfig {
  std::uint64_t seed = 1;
  Mode mode = Mode::kTpld;
  double lr = 5e-4;
  std::size_t batch_size = 16;
  std::size_t stage_epochs[3] = {15, 15, 15};
  bool reset_adam_per_stage = true;
  GenReduction gen_reduction = GenReduction::kMean;
  bool acl_mean = true;  // divide the contrastive sum by the number of anchors with positives
  bool posterior_stop_grad = false;
  std::size_t sampler_m = 2;
  Granularity granularity = Granularity::kAct;
  bool symmetrize_positives = false;
  LossCoefficients coef;
};

struct FinetuneConfig {
  std::size_t epochs = 10;
  double lr = 5e-4;
  std::size_t batch_size = 16;
  double fraction = 1.0;  // leading share of training sessions used for fine-tuning
  bool with_belief = true;
  bool with_act = true;
};

struct EvalConfig {
  std::size_t max_belief_len = 48;
  std::size_t max_act_len = 32;
  std::size_t max_resp_len = 40;
  BleuSmoothing smoothing = BleuSmoothing::kNone;
  bool oracle_belief = false;
};

struct RunConfig {
  std::string preset = "full";
  SynthSpec synth;
  std::string corpus_path;  // when set, load instead of synthesizing
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  ModelConfig model;  // vocab_size is filled from the data
  TrainConfig train;
  FinetuneConfig finetune;
  EvalConfig eval;

  // Canonical "key = value" listing of every setting, sorted by key.
  std::string dump() const;
};

// Named presets: "full" (published hyper-parameters), "micro" (desk scale),
// "tiny" (test scale). Throws UsageError for unknown names.
RunConfig preset_config(std::string_view name);

// Applies one setting; throws UsageError naming an unknown key or bad value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses "key = value" lines ('#' comments, blank lines allowed). A "preset"
// key, if present, is applied first regardless of its position.
RunConfig parse_config(std::string_view text, const std::string& origin = "<string>");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace tpld
