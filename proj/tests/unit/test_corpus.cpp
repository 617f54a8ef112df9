#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "helpers.hpp"
#include "tpld/error.hpp"
#include "tpld/text.hpp"

using namespace tpld;

namespace {

DialogAct act(const std::string& d, const std::string& a, std::optional<std::string> s = {}) {
  return DialogAct::make(d, a, s);
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("dialog acts are checked against the taxonomy") {
  CHECK_NOTHROW(act("hotel", "inform", "stars"));
  CHECK_THROWS_AS(act("spa", "inform"), DataError);
  CHECK_THROWS_AS(act("hotel", "greet"), DataError);
  CHECK_THROWS_AS(act("hotel", "inform", "food"), DataError);
  CHECK(act("hotel", "bye").str() == "hotel bye none");
}

TEST_CASE("canonicalize_acts collapses duplicates and ignores order") {
  CHECK(canonicalize_acts({act("restaurant", "inform", "area"), act("restaurant", "inform", "price")},
                          Granularity::kAct).key == "inform");
  CHECK(canonicalize_acts({act("restaurant", "request", "area"), act("restaurant", "inform", "name")},
                          Granularity::kAct).key == "inform|request");
  CHECK(canonicalize_acts({act("hotel", "inform", "area"), act("restaurant", "inform", "area")},
                          Granularity::kDomainAct).key == "hotel.inform|restaurant.inform");
  CHECK_THROWS_WITH_AS(canonicalize_acts({}, Granularity::kAct), doctest::Contains("no policy"), DataError);
}

TEST_CASE("canonicalize_acts partitions a ten-turn fixture") {
  std::vector<ActSet> sets;
  for (const auto& s : testutil::golden()) {
    for (const auto& t : s.turns) sets.push_back(t.acts);
  }
  sets.push_back({act("hotel", "bye")});
  sets.push_back({act("restaurant", "bye")});
  sets.push_back({act("hotel", "propose", "name"), act("hotel", "inform", "area")});
  REQUIRE(sets.size() == 10);

  // Oracle: the set of distinct act labels (or domain.act labels) per turn.
  auto partition = [&](bool with_domain) {
    std::set<std::set<std::string>> classes;
    for (const auto& s : sets) {
      std::set<std::string> labels;
      for (const auto& a : s) labels.insert(with_domain ? a.domain + "." + a.act : a.act);
      classes.insert(labels);
    }
    return classes.size();
  };
  auto count = [&](Granularity g) {
    std::set<std::string> keys;
    for (const auto& s : sets) keys.insert(canonicalize_acts(s, g).key);
    return keys.size();
  };
  CHECK(count(Granularity::kAct) == partition(false));
  CHECK(count(Granularity::kDomainAct) == partition(true));
  CHECK(count(Granularity::kAct) == 5);
  CHECK(count(Granularity::kDomainAct) == 8);
}

TEST_CASE("canonicalize_acts is invariant under permutation and duplication") {
  Rng rng(11);
  const auto& domains = taxonomy::domains();
  const auto& acts = taxonomy::acts();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<DialogAct> pool;
    const auto n = 1 + rng.uniform_index(5);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = rng.pick(domains);
      const auto& slots = taxonomy::domain_slots(d);
      pool.push_back(act(d, rng.pick(acts), rng.bernoulli(0.5) ? std::optional<std::string>(rng.pick(slots))
                                                                : std::nullopt));
    }
    ActSet a(pool.begin(), pool.end());
    auto shuffled = pool;
    rng.shuffle(shuffled);
    shuffled.push_back(pool.front());
    ActSet b(shuffled.begin(), shuffled.end());
    for (auto g : {Granularity::kAct, Granularity::kDomainAct}) {
      CHECK(canonicalize_acts(a, g) == canonicalize_acts(b, g));
    }
  }
}

TEST_CASE("delexicalize") {
  CHECK(delexicalize("the phone is 5550123", {{"phone", "5550123"}}) == "the phone is [value_phone]");
  CHECK(delexicalize("see you soon", {{"phone", "5550123"}}) == "see you soon");
  const std::string once = "the phone is [value_phone]";
  CHECK(delexicalize(once, {{"phone", "5550123"}}) == once);
  SUBCASE("longest overlapping value wins") {
    CHECK(delexicalize("try the grey lodge tonight", {{"name", "the grey lodge"}, {"area", "grey"}}) ==
          "try [value_name] tonight");
  }
  CHECK(placeholder("area") == "[value_area]");
  CHECK(placeholder_slots("[value_name] is in the [value_area] .") == std::set<std::string>{"area", "name"});
}

TEST_CASE("synthetic responses delexicalize idempotently and relexicalize exactly") {
  SynthSpec spec;
  spec.n_sessions = 60;
  const auto world = synthesize_corpus(spec);
  for (const auto& s : world.corpus) {
    for (const auto& t : s.turns) {
      const auto once = delexicalize(t.response_lex, t.entity);
      CHECK(once == t.response_delex);
      CHECK(delexicalize(once, t.entity) == once);
      CHECK(relexicalize(t.response_delex, t.entity) == t.response_lex);
    }
  }
}

TEST_CASE("linearize_turn") {
  const auto corpus = testutil::golden();
  const auto& s = corpus[0];
  SUBCASE("first turn has no history") {
    const auto lin = linearize_turn(s, 0, TargetKind::kBelief);
    CHECK(lin.context == "<user> i want a cheap restaurant in the north .");
    CHECK(lin.target == "<bos_belief> restaurant area north restaurant price cheap <eos_belief>");
  }
  SUBCASE("full target is belief, act, response in order") {
    const auto lin = linearize_turn(s, 1, TargetKind::kAll);
    const auto b = lin.target.find("<bos_belief>");
    const auto a = lin.target.find("<bos_act>");
    const auto r = lin.target.find("<bos_resp>");
    CHECK(b == 0);
    CHECK(b < a);
    CHECK(a < r);
  }
  SUBCASE("golden strings") {
    const auto golden = testutil::read_lines(testutil::data_dir() / "golden_linearization.txt");
    REQUIRE(golden.size() == 4);
    const auto l1 = linearize_turn(corpus[0], 1, TargetKind::kAll);
    CHECK(l1.context == golden[0]);
    CHECK(l1.target == golden[1]);
    const auto l2 = linearize_turn(corpus[1], 1, TargetKind::kAll);
    CHECK(l2.context == golden[2]);
    CHECK(l2.target == golden[3]);
  }
  SUBCASE("other target kinds") {
    CHECK(linearize_turn(s, 1, TargetKind::kAct).target ==
          "<bos_act> restaurant inform area restaurant propose name <eos_act>");
    CHECK(linearize_turn(s, 2, TargetKind::kResponse).target ==
          "<bos_resp> the phone number is [value_phone] . <eos_resp>");
    CHECK(linearize_turn(s, 1, TargetKind::kBeliefAct).target ==
          text::join(std::vector<std::string>{serialize_belief(s.turns[1].belief), serialize_acts(s.turns[1].acts)},
                     " "));
  }
}

TEST_CASE("belief and act serializations parse back") {
  for (const auto& s : testutil::golden()) {
    for (const auto& t : s.turns) {
      bool ok = false;
      CHECK(parse_belief(serialize_belief(t.belief), &ok) == t.belief);
      CHECK(ok);
      CHECK(parse_acts(serialize_acts(t.acts), &ok) == t.acts);
      CHECK(ok);
    }
  }
  bool ok = true;
  const auto partial = parse_acts("hotel inform area bogus", &ok);
  CHECK_FALSE(ok);
  CHECK(partial.size() == 1);
}

TEST_CASE("load_corpus") {
  const auto dir = testutil::scratch("corpus");
  SUBCASE("empty file") {
    std::ofstream(dir / "empty.jsonl").close();
    CHECK(load_corpus(dir / "empty.jsonl").empty());
  }
  SUBCASE("golden fixture") {
    const auto c = testutil::golden();
    REQUIRE(c.size() == 3);
    std::size_t turns = 0;
    for (const auto& s : c) turns += s.turns.size();
    CHECK(turns == 7);
    CHECK(c[1].has_revision());
  }
  SUBCASE("missing acts names the field and the line") {
    auto lines = testutil::read_lines(testutil::data_dir() / "golden_3sessions.jsonl");
    const auto pos = lines[2].find("\"acts\":[[\"attraction\",\"request\",\"area\"]],");
    REQUIRE(pos != std::string::npos);
    lines[2].erase(pos, std::string("\"acts\":[[\"attraction\",\"request\",\"area\"]],").size());
    std::ofstream out(dir / "bad.jsonl");
    for (const auto& l : lines) out << l << "\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_corpus(dir / "bad.jsonl"), doctest::Contains("acts"), DataError);
    CHECK_THROWS_WITH_AS(load_corpus(dir / "bad.jsonl"), doctest::Contains(":3"), DataError);
  }
  SUBCASE("empty act list is rejected") {
    auto lines = testutil::read_lines(testutil::data_dir() / "golden_3sessions.jsonl");
    const std::string from = "\"acts\":[[\"attraction\",\"request\",\"area\"]]";
    lines[2].replace(lines[2].find(from), from.size(), "\"acts\":[]");
    std::ofstream out(dir / "bad2.jsonl");
    for (const auto& l : lines) out << l << "\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_corpus(dir / "bad2.jsonl"), doctest::Contains("acts"), DataError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_corpus(dir / "nope.jsonl"), DataError); }
}

TEST_CASE("belief changes need a revision event") {
  auto c = testutil::golden();
  CHECK_NOTHROW(validate_session(c[1]));
  c[1].goal.revisions.clear();
  CHECK_THROWS_WITH_AS(validate_session(c[1]), doctest::Contains("belief"), DataError);
}

TEST_CASE("save then load is the identity") {
  const auto dir = testutil::scratch("roundtrip");
  SynthSpec spec;
  spec.n_sessions = 40;
  const auto world = synthesize_corpus(spec);
  save_corpus(world.corpus, dir / "c.jsonl");
  CHECK(load_corpus(dir / "c.jsonl") == world.corpus);
  save_ontology(world.ontology, dir / "o.json");
  CHECK(load_ontology(dir / "o.json") == world.ontology);
  save_database(world.database, dir / "d.json");
  CHECK(load_database(dir / "d.json") == world.database);
  save_corpus(testutil::golden(), dir / "g.jsonl");
  CHECK(load_corpus(dir / "g.jsonl") == testutil::golden());
}

TEST_CASE("synthesize_corpus") {
  SynthSpec spec;
  spec.n_sessions = 50;
  SUBCASE("deterministic under seed") {
    const auto a = synthesize_corpus(spec);
    const auto b = synthesize_corpus(spec);
    CHECK(a.corpus == b.corpus);
    CHECK(a.database == b.database);
    spec.seed = 8;
    CHECK_FALSE(synthesize_corpus(spec).corpus == a.corpus);
  }
  SUBCASE("no revisions when revision_prob is zero") {
    spec.revision_prob = 0.0;
    for (const auto& s : synthesize_corpus(spec).corpus) CHECK_FALSE(s.has_revision());
  }
  SUBCASE("revision share tracks revision_prob") {
    spec.n_sessions = 400;
    spec.revision_prob = 0.5;
    const auto c = synthesize_corpus(spec).corpus;
    const auto n = std::count_if(c.begin(), c.end(), [](const auto& s) { return s.has_revision(); });
    CHECK(n > 140);
    CHECK(n < 260);
  }
  SUBCASE("every goal selects an entity and every entity is complete") {
    const auto w = synthesize_corpus(spec);
    for (const auto& s : w.corpus) {
      std::map<std::string, std::string> cons;
      for (const auto& c : s.goal.final_constraints()) cons[c.slot] = c.value;
      CHECK_FALSE(w.database.query(s.goal.domain(), cons).empty());
      CHECK_NOTHROW(validate_session(s));
    }
    for (const auto& e : w.database.entities) {
      for (const auto& attr : w.ontology.at(e.domain).entity_attributes()) CHECK(e.attributes.contains(attr));
    }
  }
  SUBCASE("bad specs") {
    spec.n_sessions = 0;
    CHECK_THROWS_AS(synthesize_corpus(spec), DataError);
    spec.n_sessions = 5;
    spec.domains.clear();
    CHECK_THROWS_AS(synthesize_corpus(spec), DataError);
  }
}

TEST_CASE("split_corpus is ordered by session index") {
  SynthSpec spec;
  spec.n_sessions = 20;
  const auto c = synthesize_corpus(spec).corpus;
  const auto split = split_corpus(c, 0.1, 0.2);
  CHECK(split.train.size() == 14);
  CHECK(split.valid.size() == 2);
  CHECK(split.test.size() == 4);
  CHECK(split.train.front() == c.front());
  CHECK(split.test.back() == c.back());
}

}  // TEST_SUITE
