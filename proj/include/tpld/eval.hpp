#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpld/config.hpp"
#include "tpld/corpus.hpp"
#include "tpld/model.hpp"
#include "tpld/tokenizer.hpp"

namespace tpld {

// Encoder input for a context string: tokens plus <eos>, keeping the most
// recent `max_context` ids when the dialog is longer.
std::vector<TokenId> encode_context(const Vocabulary& vocab, const std::string& context, std::size_t max_context);

struct TurnPrediction {
  std::string context;   // transcript the turn was generated from
  std::string belief;    // span contents, markers stripped
  std::string acts;
  std::string response;  // delexicalized
  bool truncated = false;
};

struct DialogRun {
  std::string session_id;
  std::vector<TurnPrediction> turns;
};

// Generates a segment continuing `prefix` (which starts at the first target
// token) until `stop` or max_len tokens. Lets tests substitute oracle or
// adversarial generators for the model.
using SegmentDecoder = std::function<DecodeResult(std::span<const TokenId> context, std::span<const TokenId> prefix,
                                                  TokenId stop, std::size_t max_len)>;

template <typename T>
SegmentDecoder model_decoder(const Weights<T>& w);

// Per turn: belief, then acts, then response, each conditioned on the
// transcript built from generated responses of earlier turns.
DialogRun generate_dialog(const DialogSession& session, const Vocabulary& vocab, const SegmentDecoder& decode,
                          const EvalConfig& cfg, std::size_t max_context);

// Corpus BLEU-4, uniform weights, brevity penalty, one reference per
// candidate; result in [0, 100].
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
            BleuSmoothing smoothing = BleuSmoothing::kNone);

struct DialogScore {
  std::string session_id;
  bool inform = false;
  bool success = false;
  double succ_f1 = 0.0;  // in [0, 1]
  std::optional<std::string> entity;  // name of the resolved entity
};

struct CompletionScores {
  double inform = 0.0;   // percent
  double success = 0.0;  // percent
  std::vector<DialogScore> dialogs;
};

// Inform: the entity resolved from the belief at the last turn whose response
// carries [value_name] satisfies the goal. Success: Inform and every
// requested slot's placeholder appears in some response.
CompletionScores inform_success(const std::vector<DialogRun>& runs, const std::vector<DialogSession>& sessions,
                                const Database& db, bool oracle_belief = false);

struct MatchScores {
  double match = 0.0;    // percent
  double succ_f1 = 0.0;  // percent, mean of per-dialog F1
  std::vector<DialogScore> dialogs;
};

MatchScores match_succf1(const std::vector<DialogRun>& runs, const std::vector<DialogSession>& sessions,
                         const Database& db, const Ontology& ontology, bool oracle_belief = false);

inline double combined(double inform_or_match, double success_or_f1, double bleu_score) {
  return (inform_or_match + success_or_f1) * 0.5 + bleu_score;
}

struct RepetitionProbe {
  std::size_t sessions = 0;
  double repeat_rate = 0.0;   // revision turn re-issues the previous turn's act set
  double advance_rate = 0.0;  // revision turn moves on to the booking reference
  double other_rate = 0.0;
};

// Absent when no session carries a revision event.
std::optional<RepetitionProbe> repetition_probe(const std::vector<DialogRun>& runs,
                                                const std::vector<DialogSession>& sessions);

struct EvalReport {
  double bleu = 0.0;
  double inform = 0.0;
  double success = 0.0;
  double match = 0.0;
  double succ_f1 = 0.0;
  double combined = 0.0;  // (inform + success) / 2 + bleu
  std::size_t dialogs = 0;
  std::size_t truncated_turns = 0;
  std::vector<DialogScore> per_dialog;
  std::optional<RepetitionProbe> probe;

  std::string to_json() const;
  std::string to_table() const;
};

EvalReport evaluate_runs(const std::vector<DialogRun>& runs, const std::vector<DialogSession>& sessions,
                         const Database& db, const Ontology& ontology, const EvalConfig& cfg);

template <typename T>
EvalReport evaluate_model(const Weights<T>& w, const Vocabulary& vocab, const Corpus& sessions, const Database& db,
                          const Ontology& ontology, const EvalConfig& cfg, std::vector<DialogRun>* runs_out = nullptr);

// One JSON line per turn: {session_id, turn, belief, acts, response}.
std::string prediction_dump(const std::vector<DialogRun>& runs);

}  // namespace tpld
