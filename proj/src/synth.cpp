// Synthetic goal-driven dialog generator with a toy database.

#include <algorithm>
#include <cstdio>
#include <string>

#include "tpld/corpus.hpp"
#include "tpld/error.hpp"
#include "tpld/rng.hpp"
#include "tpld/text.hpp"

namespace tpld {
namespace {

const std::vector<std::string> kAreas = {"centre", "north", "south", "east", "west"};
const std::vector<std::string> kFoods = {"italian", "chinese", "indian", "british", "french", "thai"};
const std::vector<std::string> kPrices = {"cheap", "moderate", "expensive"};
const std::vector<std::string> kStars = {"2", "3", "4", "5"};
const std::vector<std::string> kTypes = {"museum", "park", "theatre", "college", "gallery"};

const std::vector<std::string> kNameAdjectives = {"golden", "silver", "royal",  "green",  "old",
                                                  "grand",  "little", "blue",   "lucky",  "quiet",
                                                  "bright", "hidden", "copper", "velvet", "amber"};

const std::vector<std::string>& name_nouns(const std::string& domain) {
  static const std::vector<std::string> restaurant = {"kitchen", "table", "spoon", "bistro", "grill", "oven"};
  static const std::vector<std::string> hotel = {"lodge", "inn", "manor", "rooms", "retreat"};
  static const std::vector<std::string> attraction = {"collection", "courtyard", "pavilion", "tower", "arches"};
  if (domain == "restaurant") return restaurant;
  if (domain == "hotel") return hotel;
  return attraction;
}

const std::vector<std::string> kStreets = {"mill", "station", "regent", "castle", "bridge", "king", "market"};

std::string slot_phrase(const std::string& slot, const std::string& value) {
  if (slot == "area") return "in the " + value;
  if (slot == "food") return "serving " + value + " food";
  if (slot == "price") return "in the " + value + " price range";
  if (slot == "stars") return "with " + value + " stars";
  if (slot == "type") return "that is a " + value;
  return slot + " " + value;
}

std::string request_question(const std::string& slot) {
  if (slot == "area") return "what area would you like ?";
  if (slot == "food") return "what type of food would you like ?";
  if (slot == "price") return "what price range do you prefer ?";
  if (slot == "stars") return "how many stars should it have ?";
  if (slot == "type") return "what type of attraction are you interested in ?";
  return "what " + slot + " would you like ?";
}

std::string slot_words(const std::string& slot) {
  if (slot == "phone") return "phone number";
  return slot;
}

std::string digits(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += static_cast<char>('0' + rng.uniform_index(10));
  return s;
}

std::string reference_code(Rng& rng) {
  static const std::string alphabet = "ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
  std::string s;
  for (int i = 0; i < 8; ++i) s += alphabet[rng.uniform_index(alphabet.size())];
  return s;
}

Database generate_database(const Ontology& ontology, std::uint64_t seed) {
  Database db;
  Rng rng(derive_seed(seed, {0xdb}));
  for (const auto& dom : ontology.domains) {
    // Grid over (area x second informable) so every single-slot revision stays satisfiable.
    std::string second;
    for (const auto& [slot, values] : dom.informable) {
      if (slot != "area" && slot != "price") second = slot;
    }
    std::vector<std::string> names;
    for (const auto& adj : kNameAdjectives) {
      for (const auto& noun : name_nouns(dom.name)) names.push_back("the " + adj + " " + noun);
    }
    rng.shuffle(names);
    std::size_t next_name = 0;
    for (const auto& area : dom.informable.at("area")) {
      for (const auto& v : dom.informable.at(second)) {
        Entity e;
        e.domain = dom.name;
        e.attributes["name"] = names.at(next_name++);
        e.attributes["area"] = area;
        e.attributes[second] = v;
        if (dom.informable.contains("price")) e.attributes["price"] = rng.pick(kPrices);
        for (const auto& r : dom.requestable) {
          if (r == "phone") e.attributes[r] = "01223" + digits(rng, 6);
          if (r == "address") e.attributes[r] = std::to_string(10 + rng.uniform_index(90)) + " " + rng.pick(kStreets) + " road";
          if (r == "postcode") {
            e.attributes[r] = "cb" + std::to_string(1 + rng.uniform_index(5)) + " " + digits(rng, 1) +
                              static_cast<char>('a' + rng.uniform_index(26)) +
                              static_cast<char>('a' + rng.uniform_index(26));
          }
        }
        db.entities.push_back(std::move(e));
      }
    }
  }
  return db;
}

struct SessionPlan {
  std::string domain;
  std::vector<std::string> constraint_slots;  // mention order
  std::size_t stated_first = 1;
  std::vector<std::string> requests;
  bool book = false;
  bool revise = false;
};

class SessionBuilder {
 public:
  SessionBuilder(const Ontology& ontology, const Database& db, Rng& rng) : ontology_(ontology), db_(db), rng_(rng) {}

  DialogSession build(const std::string& id, const SessionPlan& plan, const Entity& target) {
    DialogSession s;
    s.session_id = id;
    domain_ = plan.domain;
    for (const auto& slot : plan.constraint_slots) {
      s.goal.constraints.push_back({domain_, slot, target.attributes.at(slot)});
    }
    for (const auto& r : plan.requests) s.goal.requests.insert({domain_, r});
    s.goal.book = plan.book;
    reference_ = reference_code(rng_);

    // Opening turn.
    std::vector<std::string> phrases;
    for (std::size_t i = 0; i < plan.stated_first; ++i) {
      const auto& c = s.goal.constraints[i];
      phrases.push_back(slot_phrase(c.slot, c.value));
      belief_.set(domain_, c.slot, c.value);
    }
    static const std::vector<std::string> openers = {"i am looking for a", "i need a", "can you find me a"};
    std::string user = rng_.pick(openers) + " " + domain_ + " " + text::join(phrases, " and ") + " .";

    std::size_t next_constraint = plan.stated_first;
    while (true) {
      if (next_constraint < s.goal.constraints.size()) {
        const auto& c = s.goal.constraints[next_constraint];
        push_turn(s, user, {DialogAct::make(domain_, "request", c.slot)}, request_question(c.slot), {});
        static const std::vector<std::string> answers = {"i would like it ", "", "i prefer something "};
        user = rng_.pick(answers) + slot_phrase(c.slot, c.value) + " please .";
        belief_.set(domain_, c.slot, c.value);
        ++next_constraint;
        continue;
      }
      break;
    }

    // Proposal.
    entity_ = resolve();
    ActSet acts = {DialogAct::make(domain_, "propose", "name"), DialogAct::make(domain_, "inform", "area")};
    std::string resp = rng_.bernoulli(0.5) ? "how about [value_name] ? it is in the [value_area] ."
                                           : "[value_name] is a nice " + domain_ + " in the [value_area] .";
    if (plan.book) {
      acts.insert(DialogAct::make(domain_, "offer_booking"));
      resp += " shall i book it ?";
    }
    push_turn(s, user, acts, resp, entity_);

    if (plan.book) {
      booked_ = true;
      auto with_ref = entity_;
      if (plan.revise && pick_revision(s)) {
        const auto& rev = s.goal.revisions.back();
        user = "actually , i would prefer " + slot_phrase(rev.override_with.slot, rev.override_with.value) +
               " instead . please book it .";
        belief_.set(domain_, rev.override_with.slot, rev.override_with.value);
        entity_ = resolve();
        with_ref = entity_;
        with_ref["reference"] = reference_;
        push_turn(s, user,
                  {DialogAct::make(domain_, "propose", "name"), DialogAct::make(domain_, "inform", "area"),
                   DialogAct::make(domain_, "inform", "reference")},
                  "i have booked [value_name] in the [value_area] for you . the reference number is [value_reference] .",
                  with_ref);
      } else {
        static const std::vector<std::string> confirms = {"yes , please book it .",
                                                          "that sounds good , please make a booking ."};
        static const std::vector<std::string> booked = {
            "i have booked it . the reference number is [value_reference] .",
            "your booking is confirmed . the reference number is [value_reference] ."};
        with_ref["reference"] = reference_;
        push_turn(s, rng_.pick(confirms), {DialogAct::make(domain_, "inform", "reference")}, rng_.pick(booked),
                  with_ref);
      }
    }

    if (!plan.requests.empty()) {
      std::vector<std::string> asked, answered;
      ActSet req_acts;
      for (const auto& r : plan.requests) {
        asked.push_back("the " + slot_words(r));
        answered.push_back("the " + slot_words(r) + " is " + placeholder(r));
        req_acts.insert(DialogAct::make(domain_, "inform", r));
      }
      static const std::vector<std::string> ask = {"what is ", "could you tell me "};
      auto ent = entity_;
      if (booked_) ent["reference"] = reference_;
      push_turn(s, rng_.pick(ask) + text::join(asked, " and ") + " ?", req_acts, text::join(answered, " and ") + " .",
                ent);
    }

    static const std::vector<std::string> byes = {"thank you , goodbye .", "thanks , that is all i need ."};
    static const std::vector<std::string> farewells = {"you are welcome . goodbye .", "have a great day . goodbye ."};
    push_turn(s, rng_.pick(byes), {DialogAct::make(domain_, "bye")}, rng_.pick(farewells), {});
    return s;
  }

 private:
  void push_turn(DialogSession& s, const std::string& user, ActSet acts, const std::string& delex,
                 const std::map<std::string, std::string>& entity) {
    Turn t;
    t.user_utterance = user;
    t.belief = belief_;
    t.acts = std::move(acts);
    t.response_delex = delex;
    // Keep only the values the response realises.
    for (const auto& slot : placeholder_slots(delex)) t.entity[slot] = entity.at(slot);
    t.response_lex = relexicalize(delex, t.entity);
    s.turns.push_back(std::move(t));
  }

  std::map<std::string, std::string> resolve() const {
    const auto matches = db_.query(domain_, belief_.for_domain(domain_));
    if (matches.empty()) throw DataError("synthesize_corpus: goal constraints select no entity");
    return matches.front()->attributes;
  }

  bool pick_revision(DialogSession& s) {
    const auto& dom = ontology_.at(domain_);
    struct Option {
      std::string slot, value;
    };
    std::vector<Option> options;
    for (const auto& c : s.goal.constraints) {
      if (c.slot == "price") continue;
      for (const auto& v : dom.informable.at(c.slot)) {
        if (v == belief_.get(domain_, c.slot)) continue;
        auto cons = belief_.for_domain(domain_);
        cons[c.slot] = v;
        if (!db_.query(domain_, cons).empty()) options.push_back({c.slot, v});
      }
    }
    if (options.empty()) return false;
    const auto& o = options[rng_.uniform_index(options.size())];
    s.goal.revisions.push_back({s.turns.size(), {domain_, o.slot, o.value}});
    return true;
  }

  const Ontology& ontology_;
  const Database& db_;
  Rng& rng_;
  std::string domain_;
  BeliefState belief_;
  std::map<std::string, std::string> entity_;
  std::string reference_;
  bool booked_ = false;
};

}  // namespace

Ontology default_ontology(const std::vector<std::string>& domains) {
  Ontology o;
  for (const auto& name : domains) {
    DomainOntology d;
    d.name = name;
    if (name == "restaurant") {
      d.informable = {{"area", kAreas}, {"food", kFoods}, {"price", kPrices}};
      d.requestable = {"phone"};
      d.bookable = true;
    } else if (name == "hotel") {
      d.informable = {{"area", kAreas}, {"stars", kStars}, {"price", kPrices}};
      d.requestable = {"phone"};
      d.bookable = true;
    } else if (name == "attraction") {
      d.informable = {{"area", kAreas}, {"type", kTypes}};
      d.requestable = {"phone", "address", "postcode"};
      d.bookable = false;
    } else {
      throw UsageError("synthesize_corpus: no template for domain '" + name + "'");
    }
    o.domains.push_back(std::move(d));
  }
  return o;
}

SynthResult synthesize_corpus(const SynthSpec& spec) {
  if (spec.n_sessions < 1) throw DataError("synthesize_corpus: n_sessions must be at least 1");
  if (spec.domains.empty()) throw DataError("synthesize_corpus: at least one domain template is required");
  if (spec.max_turns < 2) throw DataError("synthesize_corpus: max_turns must be at least 2");
  if (spec.revision_prob < 0.0 || spec.revision_prob > 1.0) {
    throw DataError("synthesize_corpus: revision_prob must lie in [0, 1]");
  }

  SynthResult result;
  result.ontology = default_ontology(spec.domains);
  result.database = generate_database(result.ontology, spec.seed);
  if (result.database.entities.empty()) throw DataError("synthesize_corpus: database has no entities");

  std::vector<std::string> bookable;
  for (const auto& d : result.ontology.domains) {
    if (d.bookable) bookable.push_back(d.name);
  }

  for (std::size_t i = 0; i < spec.n_sessions; ++i) {
    Rng rng(derive_seed(spec.seed, {i}));
    SessionPlan plan;
    plan.revise = !bookable.empty() && rng.bernoulli(spec.revision_prob);
    plan.domain = plan.revise ? rng.pick(bookable) : rng.pick(spec.domains);
    const auto& dom = result.ontology.at(plan.domain);

    std::vector<const Entity*> candidates = result.database.query(plan.domain, {});
    if (candidates.empty()) throw DataError("synthesize_corpus: no entities for domain '" + plan.domain + "'");
    const Entity& target = *candidates[rng.uniform_index(candidates.size())];

    std::vector<std::string> slots;
    for (const auto& [slot, values] : dom.informable) slots.push_back(slot);
    rng.shuffle(slots);
    const std::size_t lo = std::min<std::size_t>(2, slots.size());
    const std::size_t n_constraints = lo + rng.uniform_index(slots.size() - lo + 1);
    slots.resize(n_constraints);
    plan.constraint_slots = slots;
    plan.stated_first = 1 + rng.uniform_index(n_constraints);

    plan.book = dom.bookable && (plan.revise || rng.bernoulli(0.6));
    if (dom.requestable.size() == 1) {
      if (rng.bernoulli(0.5)) plan.requests = dom.requestable;
    } else {
      auto req = dom.requestable;
      rng.shuffle(req);
      req.resize(1 + rng.uniform_index(2));
      std::sort(req.begin(), req.end());
      plan.requests = req;
    }

    auto needed = [&] {
      return 1 + (plan.constraint_slots.size() - plan.stated_first) + (plan.book ? 1 : 0) +
             (plan.requests.empty() ? 0 : 1) + 1;
    };
    while (needed() > spec.max_turns) {
      if (plan.stated_first < plan.constraint_slots.size()) {
        plan.stated_first = plan.constraint_slots.size();
      } else if (!plan.requests.empty()) {
        plan.requests.clear();
      } else if (plan.book) {
        plan.book = false;
        plan.revise = false;
      } else {
        throw DataError("synthesize_corpus: max_turns too small for any dialog");
      }
    }

    char id[32];
    std::snprintf(id, sizeof(id), "s%05zu", i);
    SessionBuilder builder(result.ontology, result.database, rng);
    result.corpus.push_back(builder.build(id, plan, target));
  }
  return result;
}

}  // namespace tpld
