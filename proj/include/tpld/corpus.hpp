#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace tpld {

// ---------------------------------------------------------------------------
// Fixed taxonomy registry: five act types, three domains, ten slot labels
// (at most six per domain).
// ---------------------------------------------------------------------------
namespace taxonomy {

const std::vector<std::string>& acts();
const std::vector<std::string>& domains();
const std::vector<std::string>& slots();
// Slots that belong to `domain`, in canonical order. Empty for unknown domains.
const std::vector<std::string>& domain_slots(std::string_view domain);

bool is_act(std::string_view s);
bool is_domain(std::string_view s);
bool is_slot(std::string_view s);

}  // namespace taxonomy

struct DialogAct {
  std::string domain;
  std::string act;
  std::optional<std::string> slot;

  // Validates against the taxonomy registry; throws DataError otherwise.
  static DialogAct make(std::string domain, std::string act, std::optional<std::string> slot = {});

  auto operator<=>(const DialogAct&) const = default;
  std::string str() const;  // "domain act slot" with "none" for a missing slot
};

using ActSet = std::set<DialogAct>;

// At most one value per (domain, slot); iteration order is sorted (domain, slot).
class BeliefState {
 public:
  using Key = std::pair<std::string, std::string>;

  void set(const std::string& domain, const std::string& slot, const std::string& value);
  std::optional<std::string> get(const std::string& domain, const std::string& slot) const;
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::map<Key, std::string>& entries() const { return entries_; }
  // Constraints for one domain as slot -> value.
  std::map<std::string, std::string> for_domain(const std::string& domain) const;

  bool operator==(const BeliefState&) const = default;

 private:
  std::map<Key, std::string> entries_;
};

struct Turn {
  std::string user_utterance;
  BeliefState belief;
  ActSet acts;
  std::string response_delex;
  std::string response_lex;
  // Slot -> lexical value used to realise this response (empty when none).
  std::map<std::string, std::string> entity;

  bool operator==(const Turn&) const = default;
};

struct Constraint {
  std::string domain;
  std::string slot;
  std::string value;
  auto operator<=>(const Constraint&) const = default;
};

struct RevisionEvent {
  std::size_t turn = 0;  // index of the user turn that carries the revision
  Constraint override_with;
  bool operator==(const RevisionEvent&) const = default;
};

struct Goal {
  std::vector<Constraint> constraints;
  std::set<std::pair<std::string, std::string>> requests;
  bool book = false;
  std::vector<RevisionEvent> revisions;

  std::string domain() const;
  // Constraints after applying every revision event.
  std::vector<Constraint> final_constraints() const;
  bool operator==(const Goal&) const = default;
};

struct DialogSession {
  std::string session_id;
  Goal goal;
  std::vector<Turn> turns;

  bool has_revision() const { return !goal.revisions.empty(); }
  bool operator==(const DialogSession&) const = default;
};

using Corpus = std::vector<DialogSession>;

struct DomainOntology {
  std::string name;
  std::map<std::string, std::vector<std::string>> informable;  // constraint slots and values
  std::vector<std::string> requestable;
  bool bookable = false;

  // Attributes every database entity of this domain carries.
  std::vector<std::string> entity_attributes() const;
  bool operator==(const DomainOntology&) const = default;
};

struct Ontology {
  std::vector<DomainOntology> domains;

  const DomainOntology& at(std::string_view domain) const;
  const DomainOntology* find(std::string_view domain) const;
  bool operator==(const Ontology&) const = default;
};

struct Entity {
  std::string domain;
  std::map<std::string, std::string> attributes;
  bool operator==(const Entity&) const = default;
};

struct Database {
  std::vector<Entity> entities;

  // Entities of `domain` satisfying every constraint, in database order.
  std::vector<const Entity*> query(const std::string& domain,
                                   const std::map<std::string, std::string>& constraints) const;
  bool operator==(const Database&) const = default;
};

// Canonical identifier of "the same dialog policy".
enum class Granularity { kAct, kDomainAct };

struct PolicySignature {
  std::string key;
  auto operator<=>(const PolicySignature&) const = default;
};

PolicySignature canonicalize_acts(const ActSet& acts, Granularity granularity);
Granularity parse_granularity(std::string_view s);
std::string to_string(Granularity g);

// ---------------------------------------------------------------------------
// Delexicalization
// ---------------------------------------------------------------------------
std::string placeholder(std::string_view slot);

// Replaces every whitespace-delimited occurrence of an entity value with
// "[value_<slot>]". When values overlap, the longest match wins.
std::string delexicalize(const std::string& response_lex,
                         const std::map<std::string, std::string>& entity);

// Inverse of delexicalize for the values in `entity`; unknown placeholders are kept.
std::string relexicalize(const std::string& response_delex,
                         const std::map<std::string, std::string>& entity);

// Slots whose placeholders appear in a delexicalized response.
std::set<std::string> placeholder_slots(const std::string& response_delex);

// ---------------------------------------------------------------------------
// Linearization
// ---------------------------------------------------------------------------
namespace marker {
inline constexpr std::string_view kUser = "<user>";
inline constexpr std::string_view kSystem = "<system>";
inline constexpr std::string_view kBosBelief = "<bos_belief>";
inline constexpr std::string_view kEosBelief = "<eos_belief>";
inline constexpr std::string_view kBosAct = "<bos_act>";
inline constexpr std::string_view kEosAct = "<eos_act>";
inline constexpr std::string_view kBosResp = "<bos_resp>";
inline constexpr std::string_view kEosResp = "<eos_resp>";
}  // namespace marker

enum class TargetKind { kBelief, kAct, kResponse, kBeliefAct, kAll };

struct TrainingSample {
  std::string session_id;
  std::size_t turn = 0;
  std::string context;
  std::string target;
};

std::string serialize_belief(const BeliefState& belief);   // "<bos_belief> d s v ... <eos_belief>"
std::string serialize_acts(const ActSet& acts);             // "<bos_act> d a s ... <eos_act>"
std::string serialize_response(const std::string& delex);   // "<bos_resp> ... <eos_resp>"

// Parses the inside of a belief / act span (markers optional). Malformed
// groups are skipped; `ok` reports whether everything parsed.
BeliefState parse_belief(const std::string& text, bool* ok = nullptr);
ActSet parse_acts(const std::string& text, bool* ok = nullptr);

// Context for turn t: every earlier user utterance and delexicalized system
// response with role markers, followed by the user utterance of turn t.
std::string dialog_context(const DialogSession& session, std::size_t t);

TrainingSample linearize_turn(const DialogSession& session, std::size_t t, TargetKind target);

// ---------------------------------------------------------------------------
// Persistence (JSON Lines corpus, JSON ontology/database)
// ---------------------------------------------------------------------------
inline constexpr int kCorpusSchemaVersion = 1;

// Validates every invariant of a session; throws DataError naming the field.
void validate_session(const DialogSession& session);

Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
std::string session_to_json(const DialogSession& session);
DialogSession session_from_json(const std::string& line);

Ontology load_ontology(const std::filesystem::path& path);
void save_ontology(const Ontology& ontology, const std::filesystem::path& path);
Database load_database(const std::filesystem::path& path);
void save_database(const Database& db, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic corpus generator
// ---------------------------------------------------------------------------
struct SynthSpec {
  std::vector<std::string> domains = {"restaurant", "hotel", "attraction"};
  std::size_t n_sessions = 300;
  std::size_t max_turns = 8;
  double revision_prob = 0.2;
  std::uint64_t seed = 7;
};

struct SynthResult {
  Corpus corpus;
  Database database;
  Ontology ontology;
};

Ontology default_ontology(const std::vector<std::string>& domains);
SynthResult synthesize_corpus(const SynthSpec& spec);

// Deterministic split by session index: first train, then valid, then test.
struct CorpusSplit {
  Corpus train, valid, test;
};
CorpusSplit split_corpus(const Corpus& corpus, double valid_fraction, double test_fraction);

}  // namespace tpld
