#include "tpld/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tpld/error.hpp"
#include "tpld/log.hpp"
#include "tpld/rng.hpp"
#include "tpld/text.hpp"

namespace tpld {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// taxonomy
// ---------------------------------------------------------------------------
namespace taxonomy {

const std::vector<std::string>& acts() {
  static const std::vector<std::string> v = {"bye", "inform", "offer_booking", "propose", "request"};
  return v;
}

const std::vector<std::string>& domains() {
  static const std::vector<std::string> v = {"attraction", "hotel", "restaurant"};
  return v;
}

const std::vector<std::string>& slots() {
  static const std::vector<std::string> v = {"address", "area",  "food",     "name",  "phone",
                                             "postcode", "price", "reference", "stars", "type"};
  return v;
}

const std::vector<std::string>& domain_slots(std::string_view domain) {
  static const std::vector<std::string> restaurant = {"name", "area", "food", "price", "phone", "reference"};
  static const std::vector<std::string> hotel = {"name", "area", "stars", "price", "phone", "reference"};
  static const std::vector<std::string> attraction = {"name", "area", "type", "phone", "address", "postcode"};
  static const std::vector<std::string> none;
  if (domain == "restaurant") return restaurant;
  if (domain == "hotel") return hotel;
  if (domain == "attraction") return attraction;
  return none;
}

namespace {
bool contains(const std::vector<std::string>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}
}  // namespace

bool is_act(std::string_view s) { return contains(acts(), s); }
bool is_domain(std::string_view s) { return contains(domains(), s); }
bool is_slot(std::string_view s) { return contains(slots(), s); }

}  // namespace taxonomy

// ---------------------------------------------------------------------------
// data model
// ---------------------------------------------------------------------------
DialogAct DialogAct::make(std::string domain, std::string act, std::optional<std::string> slot) {
  if (!taxonomy::is_domain(domain)) throw DataError("unknown domain '" + domain + "'");
  if (!taxonomy::is_act(act)) throw DataError("unknown act '" + act + "'");
  if (slot) {
    const auto& allowed = taxonomy::domain_slots(domain);
    if (std::find(allowed.begin(), allowed.end(), *slot) == allowed.end()) {
      throw DataError("slot '" + *slot + "' is not defined for domain '" + domain + "'");
    }
  }
  return DialogAct{std::move(domain), std::move(act), std::move(slot)};
}

std::string DialogAct::str() const { return domain + " " + act + " " + slot.value_or("none"); }

void BeliefState::set(const std::string& domain, const std::string& slot, const std::string& value) {
  entries_[{domain, slot}] = value;
}

std::optional<std::string> BeliefState::get(const std::string& domain, const std::string& slot) const {
  auto it = entries_.find({domain, slot});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, std::string> BeliefState::for_domain(const std::string& domain) const {
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : entries_) {
    if (key.first == domain) out[key.second] = value;
  }
  return out;
}

std::string Goal::domain() const { return constraints.empty() ? std::string() : constraints.front().domain; }

std::vector<Constraint> Goal::final_constraints() const {
  std::vector<Constraint> out = constraints;
  for (const auto& rev : revisions) {
    bool found = false;
    for (auto& c : out) {
      if (c.domain == rev.override_with.domain && c.slot == rev.override_with.slot) {
        c.value = rev.override_with.value;
        found = true;
      }
    }
    if (!found) out.push_back(rev.override_with);
  }
  return out;
}

std::vector<std::string> DomainOntology::entity_attributes() const {
  std::vector<std::string> out = {"name"};
  for (const auto& [slot, values] : informable) out.push_back(slot);
  for (const auto& slot : requestable) out.push_back(slot);
  return out;
}

const DomainOntology* Ontology::find(std::string_view domain) const {
  for (const auto& d : domains) {
    if (d.name == domain) return &d;
  }
  return nullptr;
}

const DomainOntology& Ontology::at(std::string_view domain) const {
  const auto* d = find(domain);
  if (!d) throw DataError("domain '" + std::string(domain) + "' is not in the ontology");
  return *d;
}

std::vector<const Entity*> Database::query(const std::string& domain,
                                           const std::map<std::string, std::string>& constraints) const {
  std::vector<const Entity*> out;
  for (const auto& e : entities) {
    if (e.domain != domain) continue;
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      auto it = e.attributes.find(slot);
      if (it == e.attributes.end() || it->second != value) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(&e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// policy signatures
// ---------------------------------------------------------------------------
PolicySignature canonicalize_acts(const ActSet& acts, Granularity granularity) {
  if (acts.empty()) throw DataError("no policy: empty act set");
  std::set<std::string> labels;
  for (const auto& a : acts) {
    labels.insert(granularity == Granularity::kAct ? a.act : a.domain + "." + a.act);
  }
  return PolicySignature{text::join(std::vector<std::string>(labels.begin(), labels.end()), "|")};
}

Granularity parse_granularity(std::string_view s) {
  if (s == "act") return Granularity::kAct;
  if (s == "domain_act") return Granularity::kDomainAct;
  throw UsageError("unknown granularity '" + std::string(s) + "'");
}

std::string to_string(Granularity g) { return g == Granularity::kAct ? "act" : "domain_act"; }

// ---------------------------------------------------------------------------
// delexicalization
// ---------------------------------------------------------------------------
std::string placeholder(std::string_view slot) { return "[value_" + std::string(slot) + "]"; }

std::string delexicalize(const std::string& response_lex, const std::map<std::string, std::string>& entity) {
  struct Candidate {
    std::vector<std::string> tokens;
    std::string slot;
  };
  std::vector<Candidate> candidates;
  for (const auto& [slot, value] : entity) {
    auto toks = text::split_ws(value);
    if (!toks.empty()) candidates.push_back({std::move(toks), slot});
  }
  // Longest values first, then slot name, so the winner is deterministic.
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() > b.tokens.size();
    return a.slot < b.slot;
  });

  const auto tokens = text::split_ws(response_lex);
  std::vector<std::string> out;
  out.reserve(tokens.size());
  std::size_t i = 0;
  while (i < tokens.size()) {
    const Candidate* best = nullptr;
    std::size_t n_matches = 0;
    for (const auto& c : candidates) {
      if (i + c.tokens.size() > tokens.size()) continue;
      if (!std::equal(c.tokens.begin(), c.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) continue;
      ++n_matches;
      if (!best) best = &c;
    }
    if (!best) {
      out.push_back(tokens[i]);
      ++i;
      continue;
    }
    if (n_matches > 1) {
      log::debug("delexicalize: overlapping values at token " + std::to_string(i) + ", keeping slot '" +
                 best->slot + "'");
    }
    out.push_back(placeholder(best->slot));
    i += best->tokens.size();
  }
  return text::join(out, " ");
}

std::string relexicalize(const std::string& response_delex, const std::map<std::string, std::string>& entity) {
  std::vector<std::string> out;
  for (const auto& tok : text::split_ws(response_delex)) {
    if (tok.starts_with("[value_") && tok.ends_with("]")) {
      const std::string slot = tok.substr(7, tok.size() - 8);
      auto it = entity.find(slot);
      out.push_back(it != entity.end() ? it->second : tok);
    } else {
      out.push_back(tok);
    }
  }
  return text::join(out, " ");
}

std::set<std::string> placeholder_slots(const std::string& response_delex) {
  std::set<std::string> out;
  for (const auto& tok : text::split_ws(response_delex)) {
    if (tok.starts_with("[value_") && tok.ends_with("]")) out.insert(tok.substr(7, tok.size() - 8));
  }
  return out;
}

// ---------------------------------------------------------------------------
// linearization
// ---------------------------------------------------------------------------
std::string serialize_belief(const BeliefState& belief) {
  std::string s(marker::kBosBelief);
  for (const auto& [key, value] : belief.entries()) {
    s += " " + key.first + " " + key.second + " " + value;
  }
  s += " ";
  s += marker::kEosBelief;
  return s;
}

std::string serialize_acts(const ActSet& acts) {
  std::string s(marker::kBosAct);
  for (const auto& a : acts) s += " " + a.str();
  s += " ";
  s += marker::kEosAct;
  return s;
}

std::string serialize_response(const std::string& delex) {
  std::string s(marker::kBosResp);
  if (!delex.empty()) s += " " + delex;
  s += " ";
  s += marker::kEosResp;
  return s;
}

namespace {

std::vector<std::string> strip_markers(const std::string& text, std::string_view bos, std::string_view eos) {
  std::vector<std::string> toks;
  for (auto& t : text::split_ws(text)) {
    if (t != bos && t != eos) toks.push_back(std::move(t));
  }
  return toks;
}

}  // namespace

BeliefState parse_belief(const std::string& text, bool* ok) {
  const auto toks = strip_markers(text, marker::kBosBelief, marker::kEosBelief);
  BeliefState belief;
  bool clean = toks.size() % 3 == 0;
  for (std::size_t i = 0; i + 2 < toks.size(); i += 3) {
    const auto& d = toks[i];
    const auto& s = toks[i + 1];
    const auto& slots = taxonomy::domain_slots(d);
    if (std::find(slots.begin(), slots.end(), s) == slots.end()) {
      clean = false;
      continue;
    }
    belief.set(d, s, toks[i + 2]);
  }
  if (ok) *ok = clean;
  return belief;
}

ActSet parse_acts(const std::string& text, bool* ok) {
  const auto toks = strip_markers(text, marker::kBosAct, marker::kEosAct);
  ActSet acts;
  bool clean = toks.size() % 3 == 0;
  for (std::size_t i = 0; i + 2 < toks.size(); i += 3) {
    try {
      std::optional<std::string> slot;
      if (toks[i + 2] != "none") slot = toks[i + 2];
      acts.insert(DialogAct::make(toks[i], toks[i + 1], slot));
    } catch (const DataError&) {
      clean = false;
    }
  }
  if (ok) *ok = clean;
  return acts;
}

std::string dialog_context(const DialogSession& session, std::size_t t) {
  std::string ctx;
  for (std::size_t j = 0; j <= t; ++j) {
    if (!ctx.empty()) ctx += " ";
    ctx += std::string(marker::kUser) + " " + session.turns[j].user_utterance;
    if (j < t) ctx += std::string(" ") + std::string(marker::kSystem) + " " + session.turns[j].response_delex;
  }
  return ctx;
}

TrainingSample linearize_turn(const DialogSession& session, std::size_t t, TargetKind target) {
  if (t >= session.turns.size()) {
    throw DataError("turn index " + std::to_string(t) + " out of range for session " + session.session_id);
  }
  const Turn& turn = session.turns[t];
  TrainingSample sample;
  sample.session_id = session.session_id;
  sample.turn = t;
  sample.context = dialog_context(session, t);
  switch (target) {
    case TargetKind::kBelief:
      sample.target = serialize_belief(turn.belief);
      break;
    case TargetKind::kAct:
      sample.target = serialize_acts(turn.acts);
      break;
    case TargetKind::kResponse:
      sample.target = serialize_response(turn.response_delex);
      break;
    case TargetKind::kBeliefAct:
      sample.target = serialize_belief(turn.belief) + " " + serialize_acts(turn.acts);
      break;
    case TargetKind::kAll:
      sample.target = serialize_belief(turn.belief) + " " + serialize_acts(turn.acts) + " " +
                      serialize_response(turn.response_delex);
      break;
  }
  return sample;
}

// ---------------------------------------------------------------------------
// validation and persistence
// ---------------------------------------------------------------------------
namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw DataError("field '" + field + "': " + what);
}

void check_token(const std::string& field, const std::string& value) {
  if (value.empty() || value.find_first_of(" \t\n") != std::string::npos) {
    fail(field, "value '" + value + "' must be a single non-empty token");
  }
}

}  // namespace

void validate_session(const DialogSession& s) {
  if (s.session_id.empty()) fail("session_id", "empty");
  if (s.goal.constraints.empty()) fail("goal.constraints", "a goal needs at least one constraint");
  for (const auto& c : s.goal.constraints) {
    const auto& slots = taxonomy::domain_slots(c.domain);
    if (std::find(slots.begin(), slots.end(), c.slot) == slots.end()) {
      fail("goal.constraints", "unknown (domain, slot) (" + c.domain + ", " + c.slot + ")");
    }
    check_token("goal.constraints", c.value);
  }
  for (const auto& [d, slot] : s.goal.requests) {
    const auto& slots = taxonomy::domain_slots(d);
    if (std::find(slots.begin(), slots.end(), slot) == slots.end()) {
      fail("goal.requests", "unknown (domain, slot) (" + d + ", " + slot + ")");
    }
  }
  if (s.turns.empty()) fail("turns", "a session needs at least one turn");
  for (const auto& rev : s.goal.revisions) {
    if (rev.turn >= s.turns.size()) fail("goal.revisions", "turn index out of range");
  }
  for (std::size_t t = 0; t < s.turns.size(); ++t) {
    const Turn& turn = s.turns[t];
    const std::string prefix = "turns[" + std::to_string(t) + "].";
    if (turn.acts.empty()) fail(prefix + "acts", "a turn needs at least one act");
    for (const auto& [key, value] : turn.belief.entries()) {
      const auto& slots = taxonomy::domain_slots(key.first);
      if (std::find(slots.begin(), slots.end(), key.second) == slots.end()) {
        fail(prefix + "belief", "unknown (domain, slot) (" + key.first + ", " + key.second + ")");
      }
      check_token(prefix + "belief", value);
    }
    for (const auto& tok : text::split_ws(turn.response_delex)) {
      if (tok.starts_with("[")) {
        if (!(tok.starts_with("[value_") && tok.ends_with("]")) ||
            !taxonomy::is_slot(tok.substr(7, tok.size() - 8))) {
          fail(prefix + "response_delex", "malformed placeholder '" + tok + "'");
        }
      }
    }
    if (t > 0) {
      for (const auto& [key, value] : s.turns[t - 1].belief.entries()) {
        auto now = turn.belief.get(key.first, key.second);
        if (now == value) continue;
        const bool revised = std::any_of(s.goal.revisions.begin(), s.goal.revisions.end(), [&](const auto& r) {
          return r.turn == t && r.override_with.domain == key.first && r.override_with.slot == key.second;
        });
        if (!revised) fail(prefix + "belief", "belief entry (" + key.first + ", " + key.second + ") dropped or changed");
      }
    }
  }
}

namespace {

const json& require(const json& j, const char* key, const std::string& field) {
  if (!j.is_object() || !j.contains(key)) fail(field.empty() ? key : field + "." + key, "missing");
  return j.at(key);
}

std::string require_string(const json& j, const char* key, const std::string& field) {
  const auto& v = require(j, key, field);
  if (!v.is_string()) fail(field.empty() ? key : field + "." + key, "expected a string");
  return v.get<std::string>();
}

json belief_to_json(const BeliefState& b) {
  json arr = json::array();
  for (const auto& [key, value] : b.entries()) arr.push_back({key.first, key.second, value});
  return arr;
}

BeliefState belief_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) fail(field, "expected an array");
  BeliefState b;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 3) fail(field, "expected [domain, slot, value] triples");
    const auto d = e[0].get<std::string>();
    const auto s = e[1].get<std::string>();
    if (b.get(d, s)) fail(field, "duplicate (domain, slot) (" + d + ", " + s + ")");
    b.set(d, s, e[2].get<std::string>());
  }
  return b;
}

json acts_to_json(const ActSet& acts) {
  json arr = json::array();
  for (const auto& a : acts) {
    arr.push_back({a.domain, a.act, a.slot ? json(*a.slot) : json(nullptr)});
  }
  return arr;
}

ActSet acts_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) fail(field, "expected an array");
  ActSet acts;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 3) fail(field, "expected [domain, act, slot|null] triples");
    std::optional<std::string> slot;
    if (!e[2].is_null()) slot = e[2].get<std::string>();
    try {
      acts.insert(DialogAct::make(e[0].get<std::string>(), e[1].get<std::string>(), slot));
    } catch (const DataError& err) {
      fail(field, err.what());
    }
  }
  return acts;
}

json constraint_to_json(const Constraint& c) { return json::array({c.domain, c.slot, c.value}); }

Constraint constraint_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3) fail(field, "expected [domain, slot, value]");
  return Constraint{j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
}

}  // namespace

std::string session_to_json(const DialogSession& s) {
  json goal;
  goal["constraints"] = json::array();
  for (const auto& c : s.goal.constraints) goal["constraints"].push_back(constraint_to_json(c));
  goal["requests"] = json::array();
  for (const auto& [d, slot] : s.goal.requests) goal["requests"].push_back({d, slot});
  goal["book"] = s.goal.book;
  goal["revisions"] = json::array();
  for (const auto& r : s.goal.revisions) {
    goal["revisions"].push_back({{"turn", r.turn}, {"override", constraint_to_json(r.override_with)}});
  }

  json turns = json::array();
  for (const auto& t : s.turns) {
    json jt;
    jt["user"] = t.user_utterance;
    jt["belief"] = belief_to_json(t.belief);
    jt["acts"] = acts_to_json(t.acts);
    jt["response_delex"] = t.response_delex;
    jt["response_lex"] = t.response_lex;
    jt["entity"] = t.entity;
    turns.push_back(std::move(jt));
  }

  json j;
  j["v"] = kCorpusSchemaVersion;
  j["session_id"] = s.session_id;
  j["goal"] = std::move(goal);
  j["turns"] = std::move(turns);
  return j.dump();
}

DialogSession session_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  try {
    const auto& v = require(j, "v", "");
    if (!v.is_number_integer() || v.get<int>() != kCorpusSchemaVersion) {
      fail("v", "unsupported schema version");
    }
    DialogSession s;
    s.session_id = require_string(j, "session_id", "");
    const auto& g = require(j, "goal", "");
    for (const auto& c : require(g, "constraints", "goal")) {
      s.goal.constraints.push_back(constraint_from_json(c, "goal.constraints"));
    }
    for (const auto& r : require(g, "requests", "goal")) {
      if (!r.is_array() || r.size() != 2) fail("goal.requests", "expected [domain, slot]");
      s.goal.requests.insert({r[0].get<std::string>(), r[1].get<std::string>()});
    }
    if (g.contains("book")) s.goal.book = g.at("book").get<bool>();
    if (g.contains("revisions")) {
      for (const auto& r : g.at("revisions")) {
        RevisionEvent ev;
        ev.turn = require(r, "turn", "goal.revisions").get<std::size_t>();
        ev.override_with = constraint_from_json(require(r, "override", "goal.revisions"), "goal.revisions.override");
        s.goal.revisions.push_back(std::move(ev));
      }
    }
    const auto& turns = require(j, "turns", "");
    if (!turns.is_array()) fail("turns", "expected an array");
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const auto& jt = turns[i];
      const std::string field = "turns[" + std::to_string(i) + "]";
      Turn t;
      t.user_utterance = require_string(jt, "user", field);
      t.belief = belief_from_json(require(jt, "belief", field), field + ".belief");
      t.acts = acts_from_json(require(jt, "acts", field), field + ".acts");
      t.response_delex = require_string(jt, "response_delex", field);
      t.response_lex = require_string(jt, "response_lex", field);
      if (jt.contains("entity")) t.entity = jt.at("entity").get<std::map<std::string, std::string>>();
      s.turns.push_back(std::move(t));
    }
    validate_session(s);
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("schema violation: ") + e.what());
  }
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      corpus.push_back(session_from_json(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file " + path.string());
  for (const auto& s : corpus) out << session_to_json(s) << '\n';
}

namespace {

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_ontology(const Ontology& ontology, const std::filesystem::path& path) {
  json j;
  j["v"] = kCorpusSchemaVersion;
  j["domains"] = json::array();
  for (const auto& d : ontology.domains) {
    j["domains"].push_back(
        {{"name", d.name}, {"informable", d.informable}, {"requestable", d.requestable}, {"bookable", d.bookable}});
  }
  write_json(j, path);
}

Ontology load_ontology(const std::filesystem::path& path) {
  const json j = read_json(path);
  Ontology o;
  try {
    for (const auto& d : j.at("domains")) {
      DomainOntology dom;
      dom.name = d.at("name").get<std::string>();
      dom.informable = d.at("informable").get<std::map<std::string, std::vector<std::string>>>();
      dom.requestable = d.at("requestable").get<std::vector<std::string>>();
      dom.bookable = d.at("bookable").get<bool>();
      o.domains.push_back(std::move(dom));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return o;
}

void save_database(const Database& db, const std::filesystem::path& path) {
  json j;
  j["v"] = kCorpusSchemaVersion;
  j["entities"] = json::array();
  for (const auto& e : db.entities) j["entities"].push_back({{"domain", e.domain}, {"attributes", e.attributes}});
  write_json(j, path);
}

Database load_database(const std::filesystem::path& path) {
  const json j = read_json(path);
  Database db;
  try {
    for (const auto& e : j.at("entities")) {
      db.entities.push_back(
          {e.at("domain").get<std::string>(), e.at("attributes").get<std::map<std::string, std::string>>()});
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return db;
}

CorpusSplit split_corpus(const Corpus& corpus, double valid_fraction, double test_fraction) {
  if (valid_fraction < 0 || test_fraction < 0 || valid_fraction + test_fraction >= 1.0) {
    throw UsageError("split fractions must be non-negative and sum to less than 1");
  }
  const auto n = corpus.size();
  const auto n_test = static_cast<std::size_t>(static_cast<double>(n) * test_fraction + 0.5);
  const auto n_valid = static_cast<std::size_t>(static_cast<double>(n) * valid_fraction + 0.5);
  const auto n_train = n - n_test - n_valid;
  CorpusSplit split;
  split.train.assign(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.valid.assign(corpus.begin() + static_cast<std::ptrdiff_t>(n_train),
                     corpus.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  split.test.assign(corpus.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), corpus.end());
  return split;
}

}  // namespace tpld
