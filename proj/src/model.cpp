#include "tpld/model.hpp"

#include <cmath>
#include <functional>

#include "tpld/error.hpp"
#include "tpld/rng.hpp"

namespace tpld {

using ad::Mask;
using ad::Tensor;

void ModelConfig::validate() const {
  auto need = [](bool ok, const char* field, const std::string& why) {
    if (!ok) throw UsageError(std::string("model.") + field + ": " + why);
  };
  need(vocab_size > special::kCount, "vocab_size", "must exceed the reserved token count");
  need(d_model >= 1, "d_model", "must be positive");
  need(n_heads >= 1, "n_heads", "must be positive");
  need(d_model % n_heads == 0, "n_heads", "must divide d_model");
  need(d_ff >= 1, "d_ff", "must be positive");
  need(max_context >= 1, "max_context", "must be positive");
  need(max_target >= 1, "max_target", "must be positive");
  need(max_turns >= 1, "max_turns", "must be positive");
  need(dropout >= 0.0 && dropout < 1.0, "dropout", "must lie in [0, 1)");
}

std::string ModelConfig::canonical() const {
  std::string s;
  auto kv = [&](const char* k, auto v) {
    s += k;
    s += '=';
    s += std::to_string(v);
    s += ';';
  };
  kv("vocab_size", vocab_size);
  kv("d_model", d_model);
  kv("n_heads", n_heads);
  kv("n_enc_layers", n_enc_layers);
  kv("n_dec_layers", n_dec_layers);
  kv("d_ff", d_ff);
  kv("max_context", max_context);
  kv("max_target", max_target);
  kv("max_turns", max_turns);
  kv("tie_output", static_cast<int>(tie_output));
  kv("separate_policy_encoders", static_cast<int>(separate_policy_encoders));
  return s;
}

namespace {

// Visits every parameter tensor of `w` in the canonical order.
template <typename W, typename F>
void visit(W& w, F&& f) {
  auto ln = [&](const std::string& p, auto& l) {
    f(p + ".gain", l.gain);
    f(p + ".bias", l.bias);
  };
  auto attn = [&](const std::string& p, auto& a) {
    f(p + ".wq", a.wq);
    f(p + ".wk", a.wk);
    f(p + ".wv", a.wv);
    f(p + ".wo", a.wo);
  };
  auto ff = [&](const std::string& p, auto& x) {
    f(p + ".w1", x.w1);
    f(p + ".b1", x.b1);
    f(p + ".w2", x.w2);
    f(p + ".b2", x.b2);
  };
  auto enc_layer = [&](const std::string& p, auto& l) {
    ln(p + ".ln1", l.ln1);
    attn(p + ".attn", l.attn);
    ln(p + ".ln2", l.ln2);
    ff(p + ".ff", l.ff);
  };
  auto seq = [&](const std::string& p, auto& s) {
    f(p + ".pos", s.pos);
    enc_layer(p + ".layer", s.layer);
    ln(p + ".ln_out", s.ln_out);
  };
  f(std::string("tok_emb"), w.tok_emb);
  f(std::string("enc_pos"), w.enc_pos);
  f(std::string("dec_pos"), w.dec_pos);
  for (std::size_t i = 0; i < w.enc.size(); ++i) enc_layer("enc." + std::to_string(i), w.enc[i]);
  ln("enc_ln", w.enc_ln);
  for (std::size_t i = 0; i < w.dec.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    auto& l = w.dec[i];
    ln(p + ".ln1", l.ln1);
    attn(p + ".self_attn", l.self_attn);
    ln(p + ".ln2", l.ln2);
    attn(p + ".cross_attn", l.cross_attn);
    ln(p + ".ln3", l.ln3);
    ff(p + ".ff", l.ff);
  }
  ln("dec_ln", w.dec_ln);
  if (w.out_proj.defined()) f(std::string("out_proj"), w.out_proj);
  seq("prior_seq", w.prior_seq);
  if (w.posterior_seq) seq("posterior_seq", *w.posterior_seq);
}

template <typename T>
Tensor<T> param(ad::Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <typename T>
nn::LayerNorm<T> make_ln(std::size_t d) {
  return {param<T>({d}), param<T>({d})};
}

template <typename T>
nn::Attention<T> make_attn(std::size_t d) {
  return {param<T>({d, d}), param<T>({d, d}), param<T>({d, d}), param<T>({d, d})};
}

template <typename T>
nn::FeedForward<T> make_ff(std::size_t d, std::size_t f) {
  return {param<T>({d, f}), param<T>({f}), param<T>({f, d}), param<T>({d})};
}

template <typename T>
nn::EncoderLayer<T> make_enc_layer(std::size_t d, std::size_t f) {
  return {make_ln<T>(d), make_attn<T>(d), make_ln<T>(d), make_ff<T>(d, f)};
}

template <typename T>
nn::SequenceEncoder<T> make_seq(const ModelConfig& c) {
  return {param<T>({c.max_turns, c.d_model}), make_enc_layer<T>(c.d_model, c.d_ff), make_ln<T>(c.d_model)};
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Mask causal_mask(std::size_t n) {
  Mask m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  }
  return m;
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, Rng* rng) {
  if (!rng || rate <= 0.0) return x;
  return ad::dropout(x, rate, *rng);
}

template <typename T>
Tensor<T> ln_apply(const nn::LayerNorm<T>& l, const Tensor<T>& x) {
  return ad::layer_norm(x, l.gain, l.bias);
}

// Multi-head scaled dot-product attention over already projected q, k, v.
template <typename T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads, const Mask* mask) {
  const std::size_t d = q.cols();
  const std::size_t dh = d / heads;
  const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  if (heads == 1) return ad::matmul(ad::softmax(ad::scale(ad::matmul_t(q, k), s), 1, mask), v);
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = ad::slice(q, 1, h * dh, (h + 1) * dh);
    const auto kh = ad::slice(k, 1, h * dh, (h + 1) * dh);
    const auto vh = ad::slice(v, 1, h * dh, (h + 1) * dh);
    outs.push_back(ad::matmul(ad::softmax(ad::scale(ad::matmul_t(qh, kh), s), 1, mask), vh));
  }
  return ad::concat(outs, 1);
}

template <typename T>
Tensor<T> mha(const nn::Attention<T>& a, const Tensor<T>& xq, const Tensor<T>& xkv, std::size_t heads,
              const Mask* mask) {
  const auto q = ad::matmul(xq, a.wq);
  const auto k = ad::matmul(xkv, a.wk);
  const auto v = ad::matmul(xkv, a.wv);
  return ad::matmul(attend(q, k, v, heads, mask), a.wo);
}

template <typename T>
Tensor<T> ff_apply(const nn::FeedForward<T>& f, const Tensor<T>& x) {
  const auto h = ad::gelu(ad::add(ad::matmul(x, f.w1), f.b1));
  return ad::add(ad::matmul(h, f.w2), f.b2);
}

template <typename T>
Tensor<T> enc_layer_apply(const nn::EncoderLayer<T>& l, Tensor<T> x, std::size_t heads, const Mask* mask,
                          double rate, Rng* rng) {
  const auto h = ln_apply(l.ln1, x);
  x = ad::add(x, maybe_dropout(mha(l.attn, h, h, heads, mask), rate, rng));
  x = ad::add(x, maybe_dropout(ff_apply(l.ff, ln_apply(l.ln2, x)), rate, rng));
  return x;
}

template <typename T>
Tensor<T> output_logits(const Weights<T>& w, const Tensor<T>& h) {
  return w.config.tie_output ? ad::matmul_t(h, w.tok_emb) : ad::matmul(h, w.out_proj);
}

template <typename T>
Tensor<T> embed(const Weights<T>& w, const Tensor<T>& pos_table, std::span<const TokenId> ids) {
  const auto tok = ad::embedding_lookup(w.tok_emb, ids);
  return ad::add(tok, ad::slice(pos_table, 0, 0, ids.size()));
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Weights<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  visit(*this, [&](const std::string& name, const Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
std::vector<Tensor<T>> Weights<T>::parameters() const {
  std::vector<Tensor<T>> out;
  visit(*this, [&](const std::string&, const Tensor<T>& t) { out.push_back(t); });
  return out;
}

template <typename T>
std::size_t Weights<T>::parameter_count() const {
  std::size_t n = 0;
  visit(*this, [&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
Weights<T> Weights<T>::clone() const {
  Weights<T> c = *this;
  visit(c, [](const std::string&, Tensor<T>& t) {
    t = Tensor<T>(t.shape(), std::vector<T>(t.values().begin(), t.values().end()), true);
  });
  return c;
}

template <typename T>
Weights<T> init_weights(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Weights<T> w;
  w.config = c;
  w.config.seed = seed;
  const std::size_t d = c.d_model;
  w.tok_emb = param<T>({c.vocab_size, d});
  w.enc_pos = param<T>({c.max_context, d});
  w.dec_pos = param<T>({c.max_target, d});
  for (std::size_t i = 0; i < c.n_enc_layers; ++i) w.enc.push_back(make_enc_layer<T>(d, c.d_ff));
  w.enc_ln = make_ln<T>(d);
  for (std::size_t i = 0; i < c.n_dec_layers; ++i) {
    w.dec.push_back({make_ln<T>(d), make_attn<T>(d), make_ln<T>(d), make_attn<T>(d), make_ln<T>(d),
                     make_ff<T>(d, c.d_ff)});
  }
  w.dec_ln = make_ln<T>(d);
  if (!c.tie_output) w.out_proj = param<T>({d, c.vocab_size});
  w.prior_seq = make_seq<T>(c);
  if (c.separate_policy_encoders) w.posterior_seq = make_seq<T>(c);

  Rng rng(derive_seed(seed, {fnv1a64("init_weights")}));
  visit(w, [&](const std::string& name, Tensor<T>& t) {
    auto v = t.mutable_values();
    if (ends_with(name, ".gain")) {
      std::fill(v.begin(), v.end(), T(1));
    } else if (ends_with(name, ".bias") || ends_with(name, ".b1") || ends_with(name, ".b2")) {
      std::fill(v.begin(), v.end(), T(0));
    } else {
      for (auto& x : v) x = static_cast<T>(rng.normal(0.0, 0.02));
    }
  });
  return w;
}

template <typename To, typename From>
Weights<To> cast_weights(const Weights<From>& src) {
  Weights<To> dst = init_weights<To>(src.config, src.config.seed);
  std::vector<Tensor<From>> from = src.parameters();
  std::size_t k = 0;
  visit(dst, [&](const std::string&, Tensor<To>& t) {
    const auto v = from.at(k++).values();
    std::vector<To> vals(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) vals[i] = static_cast<To>(v[i]);
    t = Tensor<To>(t.shape(), std::move(vals), true);
  });
  return dst;
}

template <typename T>
Tensor<T> encode(const Weights<T>& w, std::span<const TokenId> context, Rng* rng) {
  const auto& c = w.config;
  if (context.empty()) throw ShapeError("encode: empty context");
  if (context.size() > c.max_context) {
    throw ShapeError("encode: context of " + std::to_string(context.size()) + " tokens exceeds max_context " +
                     std::to_string(c.max_context));
  }
  auto x = maybe_dropout(embed(w, w.enc_pos, context), c.dropout, rng);
  for (const auto& l : w.enc) x = enc_layer_apply(l, x, c.n_heads, nullptr, c.dropout, rng);
  return ln_apply(w.enc_ln, x);
}

template <typename T>
ForwardTrace<T> forward(const Weights<T>& w, std::span<const TokenId> context, std::span<const TokenId> target,
                        Rng* rng) {
  const auto& c = w.config;
  if (target.empty()) throw ShapeError("forward: empty target");
  if (target.size() > c.max_target) {
    throw ShapeError("forward: target of " + std::to_string(target.size()) + " tokens exceeds max_target " +
                     std::to_string(c.max_target));
  }
  ForwardTrace<T> tr;
  tr.encoder_out = encode(w, context, rng);
  std::vector<TokenId> input(target.size());
  input[0] = special::kPad;
  for (std::size_t t = 1; t < target.size(); ++t) input[t] = target[t - 1];
  tr.self_attention_mask = causal_mask(input.size());

  auto x = maybe_dropout(embed(w, w.dec_pos, input), c.dropout, rng);
  for (const auto& l : w.dec) {
    auto h = ln_apply(l.ln1, x);
    x = ad::add(x, maybe_dropout(mha(l.self_attn, h, h, c.n_heads, &tr.self_attention_mask), c.dropout, rng));
    h = ln_apply(l.ln2, x);
    x = ad::add(x, maybe_dropout(mha(l.cross_attn, h, tr.encoder_out, c.n_heads, nullptr), c.dropout, rng));
    x = ad::add(x, maybe_dropout(ff_apply(l.ff, ln_apply(l.ln3, x)), c.dropout, rng));
  }
  tr.hidden = ln_apply(w.dec_ln, x);
  tr.logits = output_logits(w, tr.hidden);
  return tr;
}

template <typename T>
PolicyVectors<T> extract_policy_vectors(const ForwardTrace<T>& trace, const SpanEnds& ends, std::size_t turn) {
  if (!ends.belief_end) throw DataError("extract_policy_vectors: target has no belief segment");
  if (!ends.act_end) throw DataError("extract_policy_vectors: target has no act segment");
  const std::size_t n = trace.hidden.rows();
  if (*ends.act_end >= n || *ends.belief_end >= *ends.act_end) {
    throw DataError("extract_policy_vectors: span ends outside the trace");
  }
  return {ad::slice(trace.hidden, 0, *ends.belief_end, *ends.belief_end + 1),
          ad::slice(trace.hidden, 0, *ends.act_end, *ends.act_end + 1), turn};
}

template <typename T>
Tensor<T> policy_sequence_encode(const Tensor<T>& history, const nn::SequenceEncoder<T>& enc) {
  if (!history.defined() || history.rank() == 0 || history.numel() == 0) {
    throw ShapeError("policy_sequence_encode: empty history");
  }
  const std::size_t k = history.rows();
  if (k > enc.pos.rows()) {
    throw ShapeError("policy_sequence_encode: history of " + std::to_string(k) + " turns exceeds max_turns " +
                     std::to_string(enc.pos.rows()));
  }
  if (history.cols() != enc.pos.cols()) {
    throw ShapeError("policy_sequence_encode: history width " + std::to_string(history.cols()) + " vs model width " +
                     std::to_string(enc.pos.cols()));
  }
  const auto rows = history.rank() == 1 ? ad::concat<T>({history}, 0) : history;
  auto x = ad::add(rows, ad::slice(enc.pos, 0, 0, k));
  const auto mask = causal_mask(k);
  // Single-head attention: the history is short and the layer is auxiliary.
  x = enc_layer_apply(enc.layer, x, 1, &mask, 0.0, nullptr);
  x = ln_apply(enc.ln_out, x);
  return ad::slice(x, 0, k - 1, k);
}

namespace {

// Incremental decoder with cached keys and values; inference only.
template <typename T>
class StepDecoder {
 public:
  StepDecoder(const Weights<T>& w, std::span<const TokenId> context) : w_(w) {
    enc_ = encode(w, context);
    for (const auto& l : w.dec) {
      cross_k_.push_back(ad::matmul(enc_, l.cross_attn.wk));
      cross_v_.push_back(ad::matmul(enc_, l.cross_attn.wv));
    }
    self_k_.resize(w.dec.size());
    self_v_.resize(w.dec.size());
  }

  std::size_t position() const { return pos_; }

  // Feeds the decoder input for the next position; returns that position's logits.
  std::vector<T> step(TokenId input) {
    const auto& c = w_.config;
    const TokenId ids[1] = {input};
    auto x = ad::add(ad::embedding_lookup(w_.tok_emb, std::span<const TokenId>(ids, 1)),
                     ad::slice(w_.dec_pos, 0, pos_, pos_ + 1));
    const std::size_t d = c.d_model;
    for (std::size_t i = 0; i < w_.dec.size(); ++i) {
      const auto& l = w_.dec[i];
      auto h = ln_apply(l.ln1, x);
      const auto q = ad::matmul(h, l.self_attn.wq);
      const auto k = ad::matmul(h, l.self_attn.wk);
      const auto v = ad::matmul(h, l.self_attn.wv);
      self_k_[i].insert(self_k_[i].end(), k.values().begin(), k.values().end());
      self_v_[i].insert(self_v_[i].end(), v.values().begin(), v.values().end());
      const Tensor<T> K({pos_ + 1, d}, self_k_[i]);
      const Tensor<T> V({pos_ + 1, d}, self_v_[i]);
      x = ad::add(x, ad::matmul(attend(q, K, V, c.n_heads, nullptr), l.self_attn.wo));
      h = ln_apply(l.ln2, x);
      const auto cq = ad::matmul(h, l.cross_attn.wq);
      x = ad::add(x, ad::matmul(attend(cq, cross_k_[i], cross_v_[i], c.n_heads, nullptr), l.cross_attn.wo));
      x = ad::add(x, ff_apply(l.ff, ln_apply(l.ln3, x)));
    }
    ++pos_;
    const auto logits = output_logits(w_, ln_apply(w_.dec_ln, x));
    return {logits.values().begin(), logits.values().end()};
  }

 private:
  const Weights<T>& w_;
  Tensor<T> enc_;
  std::vector<Tensor<T>> cross_k_, cross_v_;
  std::vector<std::vector<T>> self_k_, self_v_;
  std::size_t pos_ = 0;
};

template <typename T>
TokenId argmax_lowest(const std::vector<T>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

}  // namespace

template <typename T>
DecodeResult greedy_decode(const Weights<T>& w, std::span<const TokenId> context, TokenId stop, std::size_t max_len,
                           std::span<const TokenId> prefix) {
  DecodeResult r;
  if (max_len == 0) return r;
  ad::NoGradGuard no_grad;
  const std::size_t limit = w.config.max_target;
  if (prefix.size() >= limit) {
    r.truncated = true;
    return r;
  }
  StepDecoder<T> dec(w, context);
  std::vector<T> logits = dec.step(special::kPad);
  for (auto id : prefix) logits = dec.step(id);
  while (r.ids.size() < max_len) {
    const TokenId next = argmax_lowest(logits);
    r.ids.push_back(next);
    if (next == stop) {
      r.stopped = true;
      break;
    }
    if (dec.position() >= limit) {
      r.truncated = true;
      break;
    }
    if (r.ids.size() < max_len) logits = dec.step(next);
  }
  return r;
}

#define TPLD_MODEL_INSTANTIATE(T)                                                                                \
  template struct Weights<T>;                                                                                    \
  template Weights<T> init_weights<T>(const ModelConfig&, std::uint64_t);                                        \
  template Tensor<T> encode<T>(const Weights<T>&, std::span<const TokenId>, Rng*);                              \
  template ForwardTrace<T> forward<T>(const Weights<T>&, std::span<const TokenId>, std::span<const TokenId>,     \
                                      Rng*);                                                                     \
  template PolicyVectors<T> extract_policy_vectors<T>(const ForwardTrace<T>&, const SpanEnds&, std::size_t);     \
  template Tensor<T> policy_sequence_encode<T>(const Tensor<T>&, const nn::SequenceEncoder<T>&);                \
  template DecodeResult greedy_decode<T>(const Weights<T>&, std::span<const TokenId>, TokenId, std::size_t,      \
                                         std::span<const TokenId>);

TPLD_MODEL_INSTANTIATE(float)
TPLD_MODEL_INSTANTIATE(double)
#undef TPLD_MODEL_INSTANTIATE

template Weights<double> cast_weights<double, float>(const Weights<float>&);
template Weights<float> cast_weights<float, double>(const Weights<double>&);
template Weights<float> cast_weights<float, float>(const Weights<float>&);
template Weights<double> cast_weights<double, double>(const Weights<double>&);

}  // namespace tpld
