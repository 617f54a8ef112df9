#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "tpld/error.hpp"
#include "tpld/eval.hpp"

using namespace tpld;

namespace {

// Replays the gold linearization of one session, segment by segment.
SegmentDecoder gold_decoder(const DialogSession& s, const Vocabulary& vocab) {
  auto turn = std::make_shared<std::size_t>(0);
  return [&s, &vocab, turn](std::span<const TokenId>, std::span<const TokenId> prefix, TokenId stop, std::size_t) {
    const auto gold = vocab.encode(linearize_turn(s, *turn, TargetKind::kAll).target);
    const auto open = std::find(gold.begin(), gold.end(), prefix.back());
    DecodeResult r;
    for (auto it = open + 1; it != gold.end(); ++it) {
      r.ids.push_back(*it);
      if (*it == stop) break;
    }
    r.stopped = true;
    if (stop == special::kEosResp) ++*turn;
    return r;
  };
}

// Emits a fixed string for every segment of a given kind.
SegmentDecoder scripted(const Vocabulary& vocab, const std::string& belief, const std::string& acts,
                        const std::string& response) {
  return [&vocab, belief, acts, response](std::span<const TokenId>, std::span<const TokenId>, TokenId stop,
                                          std::size_t) {
    const std::string& text = stop == special::kEosBelief ? belief : stop == special::kEosAct ? acts : response;
    DecodeResult r;
    r.ids = vocab.encode(text);
    r.ids.push_back(stop);
    r.stopped = true;
    return r;
  };
}

struct Synth {
  SynthResult data;
  Vocabulary vocab;
};

const Synth& synth() {
  static const Synth s = [] {
    SynthSpec spec;
    spec.n_sessions = 60;
    auto d = synthesize_corpus(spec);
    auto v = build_vocab(d.corpus);
    return Synth{std::move(d), std::move(v)};
  }();
  return s;
}

std::vector<DialogRun> gold_runs(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<DialogRun> runs;
  for (const auto& s : corpus) runs.push_back(generate_dialog(s, vocab, gold_decoder(s, vocab), EvalConfig{}, 4096));
  return runs;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("combined") {
  CHECK(combined(89.5, 77.6, 18.7) == doctest::Approx(102.25));
  CHECK(combined(86.2, 83.9, 23.6) == doctest::Approx(108.65));
  CHECK(combined(86.8, 73.9, 18.4) == doctest::Approx(98.75));
  CHECK(combined(1, 0, 0) == 0.5);
  CHECK(combined(0, 1, 0) == 0.5);
  CHECK(combined(0, 0, 1) == 1.0);
}

TEST_CASE("bleu") {
  const std::vector<std::string> c = {"i have [value_count] restaurants serving [value_food] food in the [value_area]",
                                      "the phone number is [value_phone] .",
                                      "how about [value_name] ? it is a nice place"};
  const std::vector<std::string> r = {
      "there are [value_count] restaurants serving [value_food] food in the [value_area] of town",
      "their phone number is [value_phone] .", "how about [value_name] ? it is a cheap place in the north"};
  // Reference values from nltk corpus_bleu.
  CHECK(bleu(c, r) == doctest::Approx(61.99822695450703).epsilon(1e-4));
  CHECK(bleu(r, r) == doctest::Approx(100.0));
  SUBCASE("no 4-gram overlap") {
    const std::vector<std::string> c2 = {"the hotel is in the east", "it has free parking"};
    const std::vector<std::string> r2 = {"the hotel is located in the east", "it offers free wifi"};
    CHECK(bleu(c2, r2) == 0.0);
    CHECK(bleu(c2, r2, BleuSmoothing::kMethod1) == doctest::Approx(21.741536759930234).epsilon(1e-4));
  }
  SUBCASE("order of pairs does not matter") {
    std::vector<std::string> c3 = c, r3 = r;
    std::reverse(c3.begin(), c3.end());
    std::reverse(r3.begin(), r3.end());
    CHECK(bleu(c3, r3) == doctest::Approx(bleu(c, r)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(bleu({}, {}), DataError);
  CHECK_THROWS_AS(bleu({"a"}, {"a", "b"}), DataError);
}

TEST_CASE("generate_dialog threads generated responses") {
  const auto& s = synth();
  const auto& session = *std::find_if(s.data.corpus.begin(), s.data.corpus.end(),
                                      [](const DialogSession& x) { return x.turns.size() >= 2; });
  const std::string fake = "[value_name] [value_phone] [value_name]";
  const auto run = generate_dialog(session, s.vocab, scripted(s.vocab, "", "", fake), EvalConfig{}, 4096);
  REQUIRE(run.turns.size() == session.turns.size());
  CHECK(run.turns[0].context == std::string(marker::kUser) + " " + session.turns[0].user_utterance);
  CHECK(run.turns[1].context.find(fake) != std::string::npos);
  CHECK(run.turns[1].context.find(session.turns[0].response_delex) == std::string::npos);
  CHECK(run.turns[0].response == fake);
}

TEST_CASE("gold decoder reproduces the gold transcript") {
  const auto& s = synth();
  const auto runs = gold_runs(s.data.corpus, s.vocab);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t t = 0; t < runs[i].turns.size(); ++t) {
      CHECK(runs[i].turns[t].response == s.data.corpus[i].turns[t].response_delex);
      CHECK_FALSE(runs[i].turns[t].truncated);
    }
  }
  const auto rep = evaluate_runs(runs, s.data.corpus, s.data.database, s.data.ontology, EvalConfig{});
  CHECK(rep.inform == 100.0);
  CHECK(rep.success == 100.0);
  CHECK(rep.match == 100.0);
  CHECK(rep.succ_f1 == doctest::Approx(100.0));
  CHECK(rep.bleu == doctest::Approx(100.0));
  REQUIRE(rep.probe);
  CHECK(rep.probe->sessions > 0);
  CHECK(rep.probe->repeat_rate == 0.0);
  CHECK(rep.probe->repeat_rate + rep.probe->advance_rate + rep.probe->other_rate == doctest::Approx(1.0));
}

TEST_CASE("repetition probe on a repeating stub") {
  const auto& s = synth();
  std::vector<DialogRun> runs;
  Corpus sessions;
  for (const auto& x : s.data.corpus) {
    if (!x.has_revision()) continue;
    sessions.push_back(x);
    runs.push_back(generate_dialog(x, s.vocab, scripted(s.vocab, "", "restaurant inform area", "ok"), EvalConfig{},
                                   4096));
  }
  REQUIRE_FALSE(sessions.empty());
  const auto p = repetition_probe(runs, sessions);
  REQUIRE(p);
  CHECK(p->repeat_rate == 1.0);
  Corpus plain;
  std::vector<DialogRun> plain_runs;
  for (std::size_t i = 0; i < s.data.corpus.size(); ++i) {
    if (s.data.corpus[i].has_revision()) continue;
    plain.push_back(s.data.corpus[i]);
    plain_runs.push_back(gold_runs({s.data.corpus[i]}, s.vocab)[0]);
  }
  CHECK_FALSE(repetition_probe(plain_runs, plain));
}

TEST_CASE("inform and success rules") {
  const auto& s = synth();
  auto runs = gold_runs(s.data.corpus, s.vocab);
  SUBCASE("responses without requested slots lose success only") {
    for (auto& run : runs) {
      for (auto& t : run.turns) {
        for (const auto& dom : s.data.ontology.domains) {
          for (const auto& slot : dom.requestable) {
            if (slot == "name") continue;
            const auto ph = placeholder(slot);
            for (auto at = t.response.find(ph); at != std::string::npos; at = t.response.find(ph)) {
              t.response.erase(at, ph.size());
            }
          }
        }
      }
    }
    const auto cs = inform_success(runs, s.data.corpus, s.data.database);
    CHECK(cs.inform == 100.0);
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const bool requested = !s.data.corpus[i].goal.requests.empty();
      CHECK(cs.dialogs[i].success == !requested);
    }
  }
  SUBCASE("wrong belief breaks inform and success") {
    for (auto& run : runs) {
      for (auto& t : run.turns) t.belief = "";
    }
    const auto cs = inform_success(runs, s.data.corpus, s.data.database);
    CHECK(cs.inform < 100.0);
    for (const auto& d : cs.dialogs) {
      if (!d.inform) CHECK_FALSE(d.success);
    }
    CHECK(cs.success <= cs.inform);
    const auto oracle = inform_success(runs, s.data.corpus, s.data.database, true);
    CHECK(oracle.inform == 100.0);
  }
  CHECK_THROWS_AS(inform_success(runs, Corpus{}, s.data.database), DataError);
}

TEST_CASE("SuccF1 arithmetic") {
  const auto& s = synth();
  const auto& dom = s.data.ontology.at("attraction");
  std::vector<std::string> req;
  for (const auto& slot : dom.requestable) {
    if (slot != "name") req.push_back(slot);
  }
  REQUIRE(req.size() >= 2);
  DialogSession session;
  session.session_id = "f1";
  session.goal.constraints.push_back({"attraction", dom.informable.begin()->first, dom.informable.begin()->second[0]});
  session.goal.requests = {{"attraction", req[0]}, {"attraction", req[1]}};
  Turn t;
  t.user_utterance = "hello";
  session.turns = {t};
  DialogRun run;
  run.session_id = "f1";
  run.turns.push_back({"", "", "", placeholder(req[0]), false});
  auto ms = match_succf1({run}, {session}, s.data.database, s.data.ontology);
  CHECK(ms.dialogs[0].succ_f1 == doctest::Approx(2.0 / 3.0));
  run.turns[0].response = placeholder(req[0]) + " " + placeholder(req[1]);
  ms = match_succf1({run}, {session}, s.data.database, s.data.ontology);
  CHECK(ms.dialogs[0].succ_f1 == doctest::Approx(1.0));
  run.turns[0].response = "nothing";
  ms = match_succf1({run}, {session}, s.data.database, s.data.ontology);
  CHECK(ms.dialogs[0].succ_f1 == 0.0);
}

TEST_CASE("report formats") {
  const auto& s = synth();
  const Corpus few(s.data.corpus.begin(), s.data.corpus.begin() + 5);
  const auto runs = gold_runs(few, s.vocab);
  const auto rep = evaluate_runs(runs, few, s.data.database, s.data.ontology, EvalConfig{});
  const auto j = rep.to_json();
  for (const char* key : {"\"bleu\"", "\"inform\"", "\"success\"", "\"match\"", "\"succ_f1\"", "\"combined\""}) {
    CHECK(j.find(key) != std::string::npos);
  }
  CHECK(rep.to_table().find("combined") != std::string::npos);
  const auto dump = prediction_dump(runs);
  std::size_t turns = 0;
  for (const auto& r : runs) turns += r.turns.size();
  CHECK(static_cast<std::size_t>(std::count(dump.begin(), dump.end(), '\n')) == turns);
  CHECK(dump.find("\"session_id\"") != std::string::npos);
}

TEST_CASE("untrained model runs end to end") {
  const auto& s = synth();
  auto cfg = testutil::small_model(s.vocab.size());
  cfg.max_context = 128;
  cfg.max_target = 64;
  const auto w = init_weights<float>(cfg, 1);
  const Corpus few(s.data.corpus.begin(), s.data.corpus.begin() + 3);
  std::vector<DialogRun> runs;
  EvalConfig ec;
  ec.max_belief_len = 4;
  const auto rep = evaluate_model(w, s.vocab, few, s.data.database, s.data.ontology, ec, &runs);
  CHECK(rep.dialogs == 3);
  CHECK(runs.size() == 3);
  CHECK(rep.truncated_turns > 0);
  CHECK(rep.success <= rep.inform);
}

TEST_CASE("encode_context keeps the most recent tokens") {
  const auto& s = synth();
  const auto ids = encode_context(s.vocab, "<user> a b c d e", 3);
  REQUIRE(ids.size() == 3);
  CHECK(ids.back() == special::kEos);
}

}  // TEST_SUITE
