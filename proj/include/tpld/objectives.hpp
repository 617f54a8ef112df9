#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpld/autodiff.hpp"
#include "tpld/model.hpp"

namespace tpld {

struct LossCoefficients {
  double alpha = 0.1;  // weight of the policy-consistency term
  double beta = 1.0;   // weight of the contrastive term
  double gamma = 0.1;  // decay applied to tasks carried over from earlier stages
  double tau = 1.0;    // contrastive temperature
};

enum class Segment { kBelief, kAct, kResponse };

// 1 at the target positions belonging to `segment` (opening and closing
// markers included). Throws DataError when the segment is absent.
ad::Mask segment_mask(std::span<const TokenId> target, Segment segment);

// Negative log-likelihood of the target over the masked positions.
template <typename T>
ad::Tensor<T> gen_loss(const ForwardTrace<T>& trace, std::span<const TokenId> target, const ad::Mask& mask,
                       ad::Reduction reduction = ad::Reduction::kMean);

// ||h_r - h_o||^2.
template <typename T>
ad::Tensor<T> turn_consistency(const ad::Tensor<T>& h_r, const ad::Tensor<T>& h_o);

// Histories are k x d (row t = turn t). Distance between the sequence
// encodings of the prior and posterior histories.
template <typename T>
ad::Tensor<T> session_consistency(const ad::Tensor<T>& prior_history, const ad::Tensor<T>& posterior_history,
                                  const nn::SequenceEncoder<T>& prior_enc, const nn::SequenceEncoder<T>& posterior_enc);

template <typename T>
ad::Tensor<T> gpc_loss(const ad::Tensor<T>& turn_term, const ad::Tensor<T>& session_term);

// Supervised contrastive loss over the rows of `vectors` after L2
// normalisation: -sum_i sum_{j in P_i} log softmax_{l != i}(z_i . z_l / tau)_j.
// Anchors with no positives contribute nothing; the result is a plain sum.
template <typename T>
ad::Tensor<T> acl_loss(const ad::Tensor<T>& vectors, const std::vector<std::vector<std::size_t>>& positives, double tau);

template <typename T>
struct LossBundle {
  std::map<std::string, ad::Tensor<T>> terms;  // gen_b, gen_a, gen_r, turn, session, gpc, acl
  LossCoefficients coef;
  ad::Tensor<T> total;

  double value(const std::string& term) const;
  bool has(const std::string& term) const { return terms.contains(term); }
};

template <typename T>
struct LossTerms {
  ad::Tensor<T> gen_b, gen_a, gen_r, turn, session, acl;  // undefined = not computed
};

// Which auxiliary stage-2 terms participate (ablation switches).
struct AuxTerms {
  bool turn = true;
  bool session = true;
  bool acl = true;
};

// stage 1: gen_b
// stage 2: gamma*gen_b + gen_a + alpha*(turn + session) + beta*acl
// stage 3: gamma*(gen_b + gen_a) + gen_r
// A term whose coefficient is exactly 0 is logged but left out of the total.
template <typename T>
LossBundle<T> stage_loss(int stage, const LossTerms<T>& terms, const LossCoefficients& coef, AuxTerms aux = {});

// gen_r plus whichever of gen_b / gen_a are defined.
template <typename T>
LossBundle<T> finetune_loss(const LossTerms<T>& terms);

// (gen_b + gen_a + gen_r) + alpha*(turn + session) + beta*acl
template <typename T>
LossBundle<T> multitask_loss(const LossTerms<T>& terms, const LossCoefficients& coef, AuxTerms aux = {});

}  // namespace tpld
