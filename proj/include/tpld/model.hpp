#pragma once

// Small pre-LN encoder-decoder transformer with learned positions, plus the
// single-layer policy-sequence encoder used by the session consistency term.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tpld/autodiff.hpp"
#include "tpld/tokenizer.hpp"

namespace tpld {

class Rng;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_context = 128;
  std::size_t max_target = 64;
  std::size_t max_turns = 16;  // longest history for the policy-sequence encoder
  double dropout = 0.0;
  std::uint64_t seed = 1;
  bool tie_output = true;                 // output projection shares the token embedding
  bool separate_policy_encoders = false;  // distinct prior / posterior sequence encoders

  // Throws UsageError naming the offending field.
  void validate() const;
  // Stable textual form covering every architecture field (not the seed).
  std::string canonical() const;
};

namespace nn {

template <typename T>
struct LayerNorm {
  ad::Tensor<T> gain, bias;
};

template <typename T>
struct Attention {
  ad::Tensor<T> wq, wk, wv, wo;  // d x d, no biases
};

template <typename T>
struct FeedForward {
  ad::Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderLayer {
  LayerNorm<T> ln1;
  Attention<T> attn;
  LayerNorm<T> ln2;
  FeedForward<T> ff;
};

template <typename T>
struct DecoderLayer {
  LayerNorm<T> ln1;
  Attention<T> self_attn;
  LayerNorm<T> ln2;
  Attention<T> cross_attn;
  LayerNorm<T> ln3;
  FeedForward<T> ff;
};

template <typename T>
struct SequenceEncoder {
  ad::Tensor<T> pos;  // max_turns x d
  EncoderLayer<T> layer;
  LayerNorm<T> ln_out;
};

}  // namespace nn

template <typename T>
struct Weights {
  ModelConfig config;
  ad::Tensor<T> tok_emb;  // V x d
  ad::Tensor<T> enc_pos;  // max_context x d
  ad::Tensor<T> dec_pos;  // max_target x d
  std::vector<nn::EncoderLayer<T>> enc;
  nn::LayerNorm<T> enc_ln;
  std::vector<nn::DecoderLayer<T>> dec;
  nn::LayerNorm<T> dec_ln;
  ad::Tensor<T> out_proj;  // d x V; undefined when tied
  nn::SequenceEncoder<T> prior_seq;
  std::optional<nn::SequenceEncoder<T>> posterior_seq;

  // Every parameter with a stable hierarchical name, in a fixed order.
  std::vector<std::pair<std::string, ad::Tensor<T>>> named_parameters() const;
  std::vector<ad::Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
  const nn::SequenceEncoder<T>& posterior_encoder() const {
    return posterior_seq ? *posterior_seq : prior_seq;
  }
  // Deep copy with fresh graph nodes.
  Weights clone() const;
};

template <typename T>
Weights<T> init_weights(const ModelConfig& config, std::uint64_t seed);

// Same architecture and values in another precision.
template <typename To, typename From>
Weights<To> cast_weights(const Weights<From>& w);

template <typename T>
struct ForwardTrace {
  ad::Tensor<T> logits;  // T x V
  ad::Tensor<T> hidden;  // T x d, decoder output before the final projection
  ad::Tensor<T> encoder_out;
  ad::Mask self_attention_mask;  // T x T, causal
};

// Decoder input is the target shifted right behind a start token (<pad>).
// Position t of the trace predicts target[t] from context and target[< t].
template <typename T>
ForwardTrace<T> forward(const Weights<T>& w, std::span<const TokenId> context, std::span<const TokenId> target,
                        Rng* dropout_rng = nullptr);

template <typename T>
ad::Tensor<T> encode(const Weights<T>& w, std::span<const TokenId> context, Rng* dropout_rng = nullptr);

template <typename T>
struct PolicyVectors {
  ad::Tensor<T> prior;      // 1 x d, hidden row at the closing belief marker
  ad::Tensor<T> posterior;  // 1 x d, hidden row at the closing act marker
  std::size_t turn = 0;
};

template <typename T>
PolicyVectors<T> extract_policy_vectors(const ForwardTrace<T>& trace, const SpanEnds& ends, std::size_t turn = 0);

// One causal transformer layer over the history (k x d, k >= 1) with learned
// positions; returns the final position's output as a 1 x d row.
template <typename T>
ad::Tensor<T> policy_sequence_encode(const ad::Tensor<T>& history, const nn::SequenceEncoder<T>& enc);

struct DecodeResult {
  std::vector<TokenId> ids;  // generated tokens, including the stop token when reached
  bool stopped = false;
  bool truncated = false;  // ran into the model's maximum target length
};

// Greedy continuation of `prefix` (which is fed, not generated). Stops after
// emitting `stop` or after max_len generated tokens. Ties pick the lowest id.
template <typename T>
DecodeResult greedy_decode(const Weights<T>& w, std::span<const TokenId> context, TokenId stop, std::size_t max_len,
                           std::span<const TokenId> prefix = {});

}  // namespace tpld
