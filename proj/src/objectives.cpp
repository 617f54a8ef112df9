#include "tpld/objectives.hpp"

#include "tpld/error.hpp"

namespace tpld {

using ad::Tensor;

ad::Mask segment_mask(std::span<const TokenId> target, Segment segment) {
  TokenId open = special::kBosBelief, close = special::kEosBelief;
  const char* name = "belief";
  if (segment == Segment::kAct) {
    open = special::kBosAct;
    close = special::kEosAct;
    name = "act";
  } else if (segment == Segment::kResponse) {
    open = special::kBosResp;
    close = special::kEosResp;
    name = "response";
  }
  ad::Mask m(target.size(), 0);
  bool inside = false, seen = false;
  for (std::size_t t = 0; t < target.size(); ++t) {
    if (target[t] == open) inside = true;
    if (inside) {
      m[t] = 1;
      seen = true;
    }
    if (target[t] == close) inside = false;
  }
  if (!seen) throw DataError(std::string("segment_mask: target has no ") + name + " segment");
  return m;
}

template <typename T>
Tensor<T> gen_loss(const ForwardTrace<T>& trace, std::span<const TokenId> target, const ad::Mask& mask,
                   ad::Reduction reduction) {
  bool any = false;
  for (auto m : mask) any = any || m != 0;
  if (!any) throw ShapeError("gen_loss: empty segment mask");
  return ad::cross_entropy(trace.logits, target, mask, reduction);
}

template <typename T>
Tensor<T> turn_consistency(const Tensor<T>& h_r, const Tensor<T>& h_o) {
  return ad::l2_sq(h_r, h_o);
}

template <typename T>
Tensor<T> session_consistency(const Tensor<T>& prior_history, const Tensor<T>& posterior_history,
                              const nn::SequenceEncoder<T>& prior_enc, const nn::SequenceEncoder<T>& posterior_enc) {
  if (!prior_history.defined() || !posterior_history.defined() || prior_history.numel() == 0) {
    throw ShapeError("session_consistency: empty history");
  }
  if (prior_history.shape() != posterior_history.shape()) {
    throw ShapeError("session_consistency: prior history " + ad::shape_str(prior_history.shape()) +
                     " vs posterior history " + ad::shape_str(posterior_history.shape()));
  }
  return ad::l2_sq(policy_sequence_encode(prior_history, prior_enc),
                   policy_sequence_encode(posterior_history, posterior_enc));
}

template <typename T>
Tensor<T> gpc_loss(const Tensor<T>& turn_term, const Tensor<T>& session_term) {
  return ad::add(turn_term, session_term);
}

template <typename T>
Tensor<T> acl_loss(const Tensor<T>& vectors, const std::vector<std::vector<std::size_t>>& positives, double tau) {
  if (!(tau > 0.0)) throw ShapeError("acl_loss: tau must be positive");
  const std::size_t n = vectors.rows();
  if (positives.size() != n) {
    throw ShapeError("acl_loss: " + std::to_string(positives.size()) + " positive lists for " + std::to_string(n) +
                     " vectors");
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : positives[i]) {
      if (j >= n) throw ShapeError("acl_loss: positive index " + std::to_string(j) + " out of range");
      if (j == i) throw ShapeError("acl_loss: sample " + std::to_string(i) + " listed as its own positive");
      pairs.emplace_back(i, j);
    }
  }
  if (pairs.empty()) return Tensor<T>::scalar(T(0));
  const auto z = ad::row_normalize(vectors);
  const auto sim = ad::scale(ad::matmul_t(z, z), static_cast<T>(1.0 / tau));
  ad::Mask off_diag(n * n, 1);
  for (std::size_t i = 0; i < n; ++i) off_diag[i * n + i] = 0;
  const auto logp = ad::log_softmax(sim, 1, &off_diag);
  return ad::scale(ad::gather_sum(logp, pairs), T(-1));
}

template <typename T>
double LossBundle<T>::value(const std::string& term) const {
  auto it = terms.find(term);
  if (it == terms.end()) throw DataError("loss bundle has no term '" + term + "'");
  return static_cast<double>(it->second.item());
}

namespace {

template <typename T>
void require(const Tensor<T>& t, const char* name, const char* where) {
  if (!t.defined()) throw DataError(std::string(where) + ": missing required term " + name);
}

// Accumulates coef * term into total, skipping exact-zero coefficients.
template <typename T>
void accumulate(Tensor<T>& total, const Tensor<T>& term, double coef) {
  if (coef == 0.0) return;
  const auto scaled = coef == 1.0 ? term : ad::scale(term, static_cast<T>(coef));
  total = total.defined() ? ad::add(total, scaled) : scaled;
}

template <typename T>
void add_aux(LossBundle<T>& b, const LossTerms<T>& in, const LossCoefficients& coef, AuxTerms aux, const char* where) {
  Tensor<T> gpc;
  if (aux.turn) {
    require(in.turn, "turn", where);
    b.terms["turn"] = in.turn;
    gpc = in.turn;
  }
  if (aux.session) {
    require(in.session, "session", where);
    b.terms["session"] = in.session;
    gpc = gpc.defined() ? gpc_loss(gpc, in.session) : in.session;
  }
  if (gpc.defined()) {
    b.terms["gpc"] = gpc;
    accumulate(b.total, gpc, coef.alpha);
  }
  if (aux.acl) {
    require(in.acl, "acl", where);
    b.terms["acl"] = in.acl;
    accumulate(b.total, in.acl, coef.beta);
  }
}

template <typename T>
void finish(LossBundle<T>& b) {
  // Every coefficient zero: the total is an explicit constant zero.
  if (!b.total.defined()) b.total = Tensor<T>::scalar(T(0));
}

}  // namespace

template <typename T>
LossBundle<T> stage_loss(int stage, const LossTerms<T>& in, const LossCoefficients& coef, AuxTerms aux) {
  LossBundle<T> b;
  b.coef = coef;
  switch (stage) {
    case 1:
      require(in.gen_b, "gen_b", "stage 1");
      b.terms["gen_b"] = in.gen_b;
      accumulate(b.total, in.gen_b, 1.0);
      break;
    case 2:
      require(in.gen_b, "gen_b", "stage 2");
      require(in.gen_a, "gen_a", "stage 2");
      b.terms["gen_b"] = in.gen_b;
      b.terms["gen_a"] = in.gen_a;
      accumulate(b.total, in.gen_b, coef.gamma);
      accumulate(b.total, in.gen_a, 1.0);
      add_aux(b, in, coef, aux, "stage 2");
      break;
    case 3:
      require(in.gen_b, "gen_b", "stage 3");
      require(in.gen_a, "gen_a", "stage 3");
      require(in.gen_r, "gen_r", "stage 3");
      b.terms["gen_b"] = in.gen_b;
      b.terms["gen_a"] = in.gen_a;
      b.terms["gen_r"] = in.gen_r;
      if (coef.gamma != 0.0) {
        accumulate(b.total, ad::add(in.gen_b, in.gen_a), coef.gamma);
      }
      accumulate(b.total, in.gen_r, 1.0);
      break;
    default:
      throw UsageError("stage_loss: unknown stage " + std::to_string(stage));
  }
  finish(b);
  return b;
}

template <typename T>
LossBundle<T> finetune_loss(const LossTerms<T>& in) {
  LossBundle<T> b;
  require(in.gen_r, "gen_r", "finetune");
  if (in.gen_b.defined()) {
    b.terms["gen_b"] = in.gen_b;
    accumulate(b.total, in.gen_b, 1.0);
  }
  if (in.gen_a.defined()) {
    b.terms["gen_a"] = in.gen_a;
    accumulate(b.total, in.gen_a, 1.0);
  }
  b.terms["gen_r"] = in.gen_r;
  accumulate(b.total, in.gen_r, 1.0);
  return b;
}

template <typename T>
LossBundle<T> multitask_loss(const LossTerms<T>& in, const LossCoefficients& coef, AuxTerms aux) {
  LossBundle<T> b;
  b.coef = coef;
  require(in.gen_b, "gen_b", "multitask");
  require(in.gen_a, "gen_a", "multitask");
  require(in.gen_r, "gen_r", "multitask");
  b.terms["gen_b"] = in.gen_b;
  b.terms["gen_a"] = in.gen_a;
  b.terms["gen_r"] = in.gen_r;
  accumulate(b.total, in.gen_b, 1.0);
  accumulate(b.total, in.gen_a, 1.0);
  accumulate(b.total, in.gen_r, 1.0);
  add_aux(b, in, coef, aux, "multitask");
  finish(b);
  return b;
}

#define TPLD_OBJ_INSTANTIATE(T)                                                                                   \
  template Tensor<T> gen_loss<T>(const ForwardTrace<T>&, std::span<const TokenId>, const ad::Mask&,              \
                                 ad::Reduction);                                                                  \
  template Tensor<T> turn_consistency<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> session_consistency<T>(const Tensor<T>&, const Tensor<T>&, const nn::SequenceEncoder<T>&,    \
                                            const nn::SequenceEncoder<T>&);                                       \
  template Tensor<T> gpc_loss<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> acl_loss<T>(const Tensor<T>&, const std::vector<std::vector<std::size_t>>&, double);         \
  template struct LossBundle<T>;                                                                                  \
  template LossBundle<T> stage_loss<T>(int, const LossTerms<T>&, const LossCoefficients&, AuxTerms);              \
  template LossBundle<T> finetune_loss<T>(const LossTerms<T>&);                                                   \
  template LossBundle<T> multitask_loss<T>(const LossTerms<T>&, const LossCoefficients&, AuxTerms);

TPLD_OBJ_INSTANTIATE(float)
TPLD_OBJ_INSTANTIATE(double)
#undef TPLD_OBJ_INSTANTIATE

}  // namespace tpld
