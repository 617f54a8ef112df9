#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tpld/error.hpp"
#include "tpld/model.hpp"
#include "tpld/tokenizer.hpp"

using namespace tpld;
using ad::Tensor;

namespace {

constexpr std::size_t kVocab = 40;

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, std::size_t vocab = kVocab) {
  std::vector<TokenId> ids(n);
  for (auto& t : ids) t = static_cast<TokenId>(special::kCount + rng.uniform_index(vocab - special::kCount));
  return ids;
}

// <bos_belief> b.. <eos_belief> <bos_act> a.. <eos_act> <bos_resp> r.. <eos_resp>
struct Fixture {
  std::vector<TokenId> context, target;
  SpanEnds ends;
};

Fixture random_fixture(Rng& rng) {
  Fixture f;
  f.context = random_ids(rng, 3 + rng.uniform_index(20));
  f.context.push_back(special::kEos);
  auto seg = [&](TokenId open, TokenId close, std::size_t n) {
    f.target.push_back(open);
    for (auto t : random_ids(rng, n)) f.target.push_back(t);
    f.target.push_back(close);
    return f.target.size() - 1;
  };
  f.ends.belief_end = seg(special::kBosBelief, special::kEosBelief, 1 + rng.uniform_index(6));
  f.ends.act_end = seg(special::kBosAct, special::kEosAct, 1 + rng.uniform_index(5));
  f.ends.resp_end = seg(special::kBosResp, special::kEosResp, 1 + rng.uniform_index(8));
  return f;
}

template <typename T>
bool rows_equal(const Tensor<T>& a, const Tensor<T>& b, std::size_t row_end) {
  for (std::size_t r = 0; r < row_end; ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (a.at(r, c) != b.at(r, c)) return false;
    }
  }
  return true;
}

std::size_t closed_form_params(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  const std::size_t ln = 2 * d, attn = 4 * d * d, ff = d * f + f + f * d + d;
  const std::size_t enc_layer = 2 * ln + attn + ff;
  const std::size_t dec_layer = 3 * ln + 2 * attn + ff;
  const std::size_t seq = c.max_turns * d + enc_layer + ln;
  std::size_t n = c.vocab_size * d + c.max_context * d + c.max_target * d;
  n += c.n_enc_layers * enc_layer + ln + c.n_dec_layers * dec_layer + ln;
  n += c.separate_policy_encoders ? 2 * seq : seq;
  if (!c.tie_output) n += d * c.vocab_size;
  return n;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
  auto c = testutil::small_model(kVocab);
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("n_heads"), UsageError);
  c = testutil::small_model(kVocab);
  c.max_target = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("init_weights") {
  const auto c = testutil::small_model(kVocab);
  const auto a = init_weights<float>(c, 3);
  const auto b = init_weights<float>(c, 3);
  const auto z = init_weights<float>(c, 4);
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  const auto pz = z.named_parameters();
  bool any_diff = false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    CHECK(pa[k].first == pb[k].first);
    for (std::size_t i = 0; i < pa[k].second.numel(); ++i) {
      CHECK(pa[k].second.values()[i] == pb[k].second.values()[i]);
      any_diff = any_diff || pa[k].second.values()[i] != pz[k].second.values()[i];
    }
  }
  CHECK(any_diff);
  SUBCASE("standard deviation near 0.02") {
    const auto v = a.tok_emb.values();
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    CHECK(std::sqrt(ss / static_cast<double>(v.size())) == doctest::Approx(0.02).epsilon(0.15));
  }
}

TEST_CASE("parameter count matches the closed form") {
  ModelConfig c;
  c.vocab_size = 512;
  c.d_model = 64;
  c.n_heads = 4;
  c.n_enc_layers = c.n_dec_layers = 2;
  c.d_ff = 256;
  c.max_context = 128;
  c.max_target = 64;
  c.max_turns = 16;
  const auto w = init_weights<float>(c, 1);
  CHECK(w.parameter_count() == closed_form_params(c));
  CHECK(w.parameter_count() == 328128u);
  c.tie_output = false;
  c.separate_policy_encoders = true;
  CHECK(init_weights<float>(c, 1).parameter_count() == closed_form_params(c));
}

TEST_CASE("forward shapes and limits") {
  const auto c = testutil::small_model(kVocab);
  const auto w = init_weights<double>(c, 1);
  Rng rng(1);
  const auto ctx = random_ids(rng, 5);
  const std::vector<TokenId> one = {special::kBosBelief};
  const auto tr = forward(w, ctx, one);
  CHECK(tr.logits.rows() == 1);
  CHECK(tr.logits.cols() == kVocab);
  CHECK(tr.hidden.cols() == c.d_model);
  CHECK_THROWS_AS(forward(w, random_ids(rng, c.max_context + 1), one), ShapeError);
  CHECK_THROWS_AS(forward(w, ctx, random_ids(rng, c.max_target + 1)), ShapeError);
  CHECK_THROWS_AS(forward(w, std::vector<TokenId>{}, one), ShapeError);
}

TEST_CASE("forward is finite on random inputs") {
  const auto w = init_weights<float>(testutil::small_model(kVocab), 2);
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const auto f = random_fixture(rng);
    const auto tr = forward(w, f.context, f.target);
    for (float x : tr.logits.values()) REQUIRE(std::isfinite(x));
  }
}

TEST_CASE("decoder is causal") {
  const auto w = init_weights<float>(testutil::small_model(kVocab), 3);
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_fixture(rng);
    const auto base = forward(w, f.context, f.target);
    auto edited = f.target;
    const std::size_t k = rng.uniform_index(edited.size());
    edited[k] = static_cast<TokenId>((edited[k] + 1) % kVocab);
    const auto other = forward(w, f.context, std::span<const TokenId>(edited));
    // Position t sees target tokens < t, so rows 0..k are untouched.
    CHECK(rows_equal(base.hidden, other.hidden, k + 1));
    if (k + 1 < edited.size()) CHECK_FALSE(rows_equal(base.hidden, other.hidden, edited.size()));
  }
}

TEST_CASE("policy prior is blind to act and response tokens") {
  const auto w = init_weights<float>(testutil::small_model(kVocab), 4);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_fixture(rng);
    auto edited = f.target;
    for (std::size_t i = *f.ends.belief_end + 1; i < edited.size(); ++i) {
      if (i == *f.ends.act_end || i == *f.ends.resp_end) continue;
      edited[i] = static_cast<TokenId>(special::kCount + rng.uniform_index(kVocab - special::kCount));
    }
    const auto a = extract_policy_vectors(forward(w, f.context, f.target), f.ends);
    const auto b = extract_policy_vectors(forward(w, f.context, std::span<const TokenId>(edited)), f.ends);
    CHECK(rows_equal(a.prior, b.prior, 1));
  }
}

TEST_CASE("policy posterior reacts to belief tokens") {
  const auto w = init_weights<float>(testutil::small_model(kVocab), 5);
  Rng rng(5);
  const auto f = random_fixture(rng);
  auto edited = f.target;
  edited[1] = static_cast<TokenId>(edited[1] == 20 ? 21 : 20);
  const auto a = extract_policy_vectors(forward(w, f.context, f.target), f.ends);
  const auto b = extract_policy_vectors(forward(w, f.context, std::span<const TokenId>(edited)), f.ends);
  CHECK_FALSE(rows_equal(a.posterior, b.posterior, 1));
}

TEST_CASE("extract_policy_vectors indexes the span ends") {
  const auto w = init_weights<double>(testutil::small_model(kVocab), 6);
  Rng rng(6);
  const std::vector<TokenId> target = {special::kBosBelief, 12, 13, 14, special::kEosBelief,
                                       special::kBosAct,    15, 16, 17, special::kEosAct};
  const auto tr = forward(w, random_ids(rng, 6), target);
  SpanEnds ends;
  ends.belief_end = 4;
  ends.act_end = 9;
  const auto pv = extract_policy_vectors(tr, ends, 2);
  CHECK(pv.turn == 2);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(pv.prior.at(0, c) == tr.hidden.at(4, c));
    CHECK(pv.posterior.at(0, c) == tr.hidden.at(9, c));
  }
  SpanEnds missing;
  missing.belief_end = 4;
  CHECK_THROWS_AS(extract_policy_vectors(tr, missing), DataError);
}

TEST_CASE("policy_sequence_encode") {
  const auto c = testutil::small_model(kVocab);
  const auto w = init_weights<double>(c, 7);
  Rng rng(7);
  const auto hist = testutil::random_tensor<double>(rng, {4, c.d_model}, false);
  SUBCASE("one output row for any history length") {
    for (std::size_t k = 1; k <= 4; ++k) {
      const auto out = policy_sequence_encode(ad::slice(hist, 0, 0, k), w.prior_seq);
      CHECK(out.rows() == 1);
      CHECK(out.cols() == c.d_model);
    }
  }
  SUBCASE("single-turn history depends on that turn only") {
    const auto a = policy_sequence_encode(ad::slice(hist, 0, 0, 1), w.prior_seq);
    const auto b = policy_sequence_encode(ad::slice(hist, 0, 0, 1), w.prior_seq);
    CHECK(rows_equal(a, b, 1));
    const auto other = policy_sequence_encode(ad::slice(hist, 0, 1, 2), w.prior_seq);
    CHECK_FALSE(rows_equal(a, other, 1));
  }
  SUBCASE("order of earlier turns matters") {
    const auto a = policy_sequence_encode(hist, w.prior_seq);
    const auto swapped = ad::concat<double>({ad::slice(hist, 0, 1, 2), ad::slice(hist, 0, 0, 1), ad::slice(hist, 0, 2, 4)}, 0);
    const auto b = policy_sequence_encode(swapped, w.prior_seq);
    CHECK_FALSE(rows_equal(a, b, 1));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(policy_sequence_encode(testutil::random_tensor<double>(rng, {c.max_turns + 1, c.d_model}, false),
                                           w.prior_seq),
                    ShapeError);
    CHECK_THROWS_AS(policy_sequence_encode(testutil::random_tensor<double>(rng, {2, c.d_model + 1}, false), w.prior_seq),
                    ShapeError);
  }
}

TEST_CASE("greedy_decode") {
  const auto c = testutil::small_model(kVocab);
  const auto w = init_weights<float>(c, 8);
  Rng rng(8);
  const auto ctx = random_ids(rng, 9);
  SUBCASE("max_len 0") { CHECK(greedy_decode(w, ctx, special::kEosResp, 0).ids.empty()); }
  SUBCASE("deterministic") {
    const auto a = greedy_decode(w, ctx, special::kEosResp, 12);
    const auto b = greedy_decode(w, ctx, special::kEosResp, 12);
    CHECK(a.ids == b.ids);
  }
  SUBCASE("agrees with argmax of teacher-forced logits") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto cx = random_ids(rng, 4 + rng.uniform_index(10));
      const std::vector<TokenId> prefix = {special::kBosBelief, static_cast<TokenId>(12 + trial)};
      const auto out = greedy_decode(w, cx, special::kEosBelief, 10, prefix);
      REQUIRE_FALSE(out.ids.empty());
      std::vector<TokenId> full = prefix;
      full.insert(full.end(), out.ids.begin(), out.ids.end());
      const auto tr = forward(w, cx, full);
      for (std::size_t i = 0; i < out.ids.size(); ++i) {
        const std::size_t row = prefix.size() + i;
        std::size_t best = 0;
        for (std::size_t j = 1; j < kVocab; ++j) {
          if (tr.logits.at(row, j) > tr.logits.at(row, best)) best = j;
        }
        CHECK(out.ids[i] == static_cast<TokenId>(best));
      }
    }
  }
  SUBCASE("stops at the model's target length") {
    const auto out = greedy_decode(w, ctx, static_cast<TokenId>(kVocab + 5), 1000);
    CHECK(out.ids.size() == c.max_target);
    CHECK(out.truncated);
    CHECK_FALSE(out.stopped);
  }
}

TEST_CASE("cast_weights keeps the values") {
  const auto w = init_weights<float>(testutil::small_model(kVocab), 9);
  const auto d = cast_weights<double>(w);
  const auto pf = w.parameters();
  const auto pd = d.parameters();
  REQUIRE(pf.size() == pd.size());
  for (std::size_t k = 0; k < pf.size(); ++k) {
    for (std::size_t i = 0; i < pf[k].numel(); ++i) CHECK(pd[k].values()[i] == static_cast<double>(pf[k].values()[i]));
  }
}

TEST_CASE("full model with cross_entropy passes a gradient check") {
  auto c = testutil::micro_model(kVocab);
  c.max_context = 16;
  c.max_target = 12;
  const auto w = init_weights<double>(c, 10);
  Rng rng(10);
  const auto f = random_fixture(rng);
  std::vector<TokenId> ctx(f.context.begin(), f.context.begin() + std::min<std::size_t>(f.context.size(), 10));
  std::vector<TokenId> tgt(f.target.begin(), f.target.begin() + std::min<std::size_t>(f.target.size(), 10));
  const auto params = w.parameters();
  const auto rep = ad::grad_check([&] { return ad::cross_entropy(forward(w, ctx, tgt).logits, tgt); },
                                  params, 1e-5, 6);
  CAPTURE(rep.tensor_index);
  CAPTURE(rep.coord);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("golden micro-model snapshot") {
  auto c = testutil::micro_model(kVocab);
  const auto w = init_weights<float>(c, 2024);
  const std::vector<TokenId> ctx = {special::kUser, 20, 21, special::kEos};
  const std::vector<TokenId> tgt = {special::kBosBelief, 30};
  const auto tr = forward(w, ctx, tgt);
  const std::vector<std::pair<std::size_t, float>> frozen = {
      {0, 0.402170867f},  {5, -0.105760075f},  {17, -0.173497424f}, {39, 0.0439655297f},
      {40, 0.0622947924f}, {63, -0.17823875f}, {79, -0.0928762406f}};
  for (const auto& [i, v] : frozen) CHECK(tr.logits.values()[i] == doctest::Approx(v).epsilon(1e-5));
  // An untrained model collapses onto the lowest id.
  CHECK(greedy_decode(w, ctx, special::kEosBelief, 6).ids == std::vector<TokenId>(6, special::kPad));
}

}  // TEST_SUITE
