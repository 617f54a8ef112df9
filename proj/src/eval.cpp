#include "tpld/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "tpld/error.hpp"
#include "tpld/text.hpp"

namespace tpld {

using nlohmann::json;

std::vector<TokenId> encode_context(const Vocabulary& vocab, const std::string& context, std::size_t max_context) {
  auto ids = vocab.encode(context);
  ids.push_back(special::kEos);
  if (ids.size() > max_context) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(max_context));
  return ids;
}

template <typename T>
SegmentDecoder model_decoder(const Weights<T>& w) {
  return [&w](std::span<const TokenId> context, std::span<const TokenId> prefix, TokenId stop, std::size_t max_len) {
    return greedy_decode(w, context, stop, max_len, prefix);
  };
}

namespace {

// Runs one segment: forces `open`, decodes until `close`, and appends both
// markers (the closing one forced when decoding ran out) to `prefix`.
std::string decode_segment(const SegmentDecoder& decode, std::span<const TokenId> context,
                           std::vector<TokenId>& prefix, TokenId open, TokenId close, std::size_t max_len,
                           const Vocabulary& vocab, bool& truncated) {
  prefix.push_back(open);
  const auto r = decode(context, prefix, close, max_len);
  std::vector<TokenId> body;
  for (auto id : r.ids) {
    if (id == close) break;
    body.push_back(id);
  }
  if (!r.stopped || r.truncated) truncated = true;
  prefix.insert(prefix.end(), body.begin(), body.end());
  prefix.push_back(close);
  return vocab.decode(body);
}

}  // namespace

DialogRun generate_dialog(const DialogSession& session, const Vocabulary& vocab, const SegmentDecoder& decode,
                          const EvalConfig& cfg, std::size_t max_context) {
  DialogRun run;
  run.session_id = session.session_id;
  std::string transcript;
  for (std::size_t t = 0; t < session.turns.size(); ++t) {
    if (!transcript.empty()) transcript += " ";
    transcript += std::string(marker::kUser) + " " + session.turns[t].user_utterance;
    TurnPrediction p;
    p.context = transcript;
    const auto ctx = encode_context(vocab, transcript, max_context);
    std::vector<TokenId> prefix;
    p.belief = decode_segment(decode, ctx, prefix, special::kBosBelief, special::kEosBelief, cfg.max_belief_len, vocab,
                              p.truncated);
    p.acts = decode_segment(decode, ctx, prefix, special::kBosAct, special::kEosAct, cfg.max_act_len, vocab,
                            p.truncated);
    p.response = decode_segment(decode, ctx, prefix, special::kBosResp, special::kEosResp, cfg.max_resp_len, vocab,
                                p.truncated);
    transcript += std::string(" ") + std::string(marker::kSystem);
    if (!p.response.empty()) transcript += " " + p.response;
    run.turns.push_back(std::move(p));
  }
  return run;
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
            BleuSmoothing smoothing) {
  if (candidates.size() != references.size()) {
    throw DataError("bleu: " + std::to_string(candidates.size()) + " candidates for " +
                    std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw DataError("bleu: empty corpus");
  double matches[4] = {0, 0, 0, 0};
  double totals[4] = {0, 0, 0, 0};
  double cand_len = 0, ref_len = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto c = text::split_ws(candidates[k]);
    const auto r = text::split_ws(references[k]);
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, int> ref_counts, cand_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      for (std::size_t i = 0; i + n <= c.size(); ++i) ++cand_counts[{c.begin() + i, c.begin() + i + n}];
      for (const auto& [g, cnt] : cand_counts) {
        auto it = ref_counts.find(g);
        if (it != ref_counts.end()) matches[n - 1] += std::min(cnt, it->second);
        totals[n - 1] += cnt;
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    double num = matches[n];
    if (num == 0) {
      if (smoothing == BleuSmoothing::kNone || totals[n] == 0) return 0.0;
      num = 0.1;
    }
    log_sum += 0.25 * std::log(num / totals[n]);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum);
}

namespace {

void require_aligned(const std::vector<DialogRun>& runs, const std::vector<DialogSession>& sessions) {
  if (runs.size() != sessions.size()) {
    throw DataError("evaluation: " + std::to_string(runs.size()) + " runs for " + std::to_string(sessions.size()) +
                    " goals");
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].session_id != sessions[i].session_id) {
      throw DataError("evaluation: run " + runs[i].session_id + " has no matching goal");
    }
    if (sessions[i].goal.constraints.empty()) throw DataError("evaluation: session " + runs[i].session_id + " has no goal");
  }
}

bool has_placeholder(const std::string& response, const std::string& slot) {
  return placeholder_slots(response).contains(slot);
}

// Entity offered by the run, resolved by the belief at the last turn that
// mentions [value_name].
const Entity* offered_entity(const DialogRun& run, const DialogSession& session, const Database& db,
                             bool oracle_belief) {
  const std::string domain = session.goal.domain();
  for (std::size_t t = run.turns.size(); t-- > 0;) {
    if (!has_placeholder(run.turns[t].response, "name")) continue;
    const BeliefState belief = oracle_belief && t < session.turns.size() ? session.turns[t].belief
                                                                        : parse_belief(run.turns[t].belief);
    const auto constraints = belief.for_domain(domain);
    if (constraints.empty()) return nullptr;
    const auto hits = db.query(domain, constraints);
    return hits.empty() ? nullptr : hits.front();
  }
  return nullptr;
}

bool satisfies_goal(const Entity& e, const DialogSession& session) {
  for (const auto& c : session.goal.final_constraints()) {
    if (c.domain != e.domain) return false;
    auto it = e.attributes.find(c.slot);
    if (it == e.attributes.end() || it->second != c.value) return false;
  }
  return true;
}

DialogScore score_dialog(const DialogRun& run, const DialogSession& session, const Database& db, bool oracle_belief,
                         const Ontology* ontology) {
  DialogScore s;
  s.session_id = run.session_id;
  const Entity* e = offered_entity(run, session, db, oracle_belief);
  if (e) {
    auto it = e->attributes.find("name");
    if (it != e->attributes.end()) s.entity = it->second;
  }
  s.inform = e && satisfies_goal(*e, session);
  std::set<std::string> provided;
  for (const auto& t : run.turns) {
    for (const auto& slot : placeholder_slots(t.response)) provided.insert(slot);
  }
  bool all_requested = true;
  std::set<std::string> requested;
  for (const auto& [d, slot] : session.goal.requests) {
    requested.insert(slot);
    if (!provided.contains(slot)) all_requested = false;
  }
  s.success = s.inform && all_requested;
  if (ontology) {
    const auto* dom = ontology->find(session.goal.domain());
    std::set<std::string> offered;
    if (dom) {
      for (const auto& slot : dom->requestable) {
        if (provided.contains(slot)) offered.insert(slot);
      }
    }
    std::size_t hit = 0;
    for (const auto& slot : requested) hit += offered.contains(slot) ? 1 : 0;
    if (requested.empty() && offered.empty()) {
      s.succ_f1 = 1.0;
    } else if (hit == 0) {
      s.succ_f1 = 0.0;
    } else {
      const double p = static_cast<double>(hit) / static_cast<double>(offered.size());
      const double r = static_cast<double>(hit) / static_cast<double>(requested.size());
      s.succ_f1 = 2 * p * r / (p + r);
    }
  }
  return s;
}

}  // namespace

CompletionScores inform_success(const std::vector<DialogRun>& runs, const std::vector<DialogSession>& sessions,
                                const Database& db, bool oracle_belief) {
  require_aligned(runs, sessions);
  CompletionScores out;
  std::size_t inform = 0, success = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    out.dialogs.push_back(score_dialog(runs[i], sessions[i], db, oracle_belief, nullptr));
    inform += out.dialogs.back().inform;
    success += out.dialogs.back().success;
  }
  if (!runs.empty()) {
    out.inform = 100.0 * static_cast<double>(inform) / static_cast<double>(runs.size());
    out.success = 100.0 * static_cast<double>(success) / static_cast<double>(runs.size());
  }
  return out;
}

MatchScores match_succf1(const std::vector<DialogRun>& runs, const std::vector<DialogSession>& sessions,
                         const Database& db, const Ontology& ontology, bool oracle_belief) {
  require_aligned(runs, sessions);
  MatchScores out;
  std::size_t match = 0;
  double f1 = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    out.dialogs.push_back(score_dialog(runs[i], sessions[i], db, oracle_belief, &ontology));
    match += out.dialogs.back().inform;
    f1 += out.dialogs.back().succ_f1;
  }
  if (!runs.empty()) {
    out.match = 100.0 * static_cast<double>(match) / static_cast<double>(runs.size());
    out.succ_f1 = 100.0 * f1 / static_cast<double>(runs.size());
  }
  return out;
}

std::optional<RepetitionProbe> repetition_probe(const std::vector<DialogRun>& runs,
                                                const std::vector<DialogSession>& sessions) {
  require_aligned(runs, sessions);
  RepetitionProbe p;
  std::size_t repeat = 0, advance = 0, other = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& s = sessions[i];
    if (!s.has_revision()) continue;
    const std::size_t k = s.goal.revisions.front().turn;
    if (k == 0 || k >= runs[i].turns.size()) continue;
    ++p.sessions;
    const auto before = parse_acts(runs[i].turns[k - 1].acts);
    const auto after = parse_acts(runs[i].turns[k].acts);
    if (!after.empty() && after == before) {
      ++repeat;
    } else if (has_placeholder(runs[i].turns[k].response, "reference")) {
      ++advance;
    } else {
      ++other;
    }
  }
  if (p.sessions == 0) return std::nullopt;
  const double n = static_cast<double>(p.sessions);
  p.repeat_rate = static_cast<double>(repeat) / n;
  p.advance_rate = static_cast<double>(advance) / n;
  p.other_rate = static_cast<double>(other) / n;
  return p;
}

EvalReport evaluate_runs(const std::vector<DialogRun>& runs, const std::vector<DialogSession>& sessions,
                         const Database& db, const Ontology& ontology, const EvalConfig& cfg) {
  require_aligned(runs, sessions);
  if (runs.empty()) throw DataError("evaluation: no dialogs");
  EvalReport r;
  std::vector<std::string> cands, refs;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].turns.size() != sessions[i].turns.size()) {
      throw DataError("evaluation: run " + runs[i].session_id + " has the wrong number of turns");
    }
    for (std::size_t t = 0; t < runs[i].turns.size(); ++t) {
      cands.push_back(runs[i].turns[t].response);
      refs.push_back(sessions[i].turns[t].response_delex);
      r.truncated_turns += runs[i].turns[t].truncated ? 1 : 0;
    }
  }
  r.bleu = bleu(cands, refs, cfg.smoothing);
  const auto ms = match_succf1(runs, sessions, db, ontology, cfg.oracle_belief);
  std::size_t inform = 0, success = 0;
  for (const auto& d : ms.dialogs) {
    inform += d.inform;
    success += d.success;
  }
  const double n = static_cast<double>(runs.size());
  r.inform = 100.0 * static_cast<double>(inform) / n;
  r.success = 100.0 * static_cast<double>(success) / n;
  r.match = ms.match;
  r.succ_f1 = ms.succ_f1;
  r.combined = combined(r.inform, r.success, r.bleu);
  r.dialogs = runs.size();
  r.per_dialog = ms.dialogs;
  r.probe = repetition_probe(runs, sessions);
  return r;
}

template <typename T>
EvalReport evaluate_model(const Weights<T>& w, const Vocabulary& vocab, const Corpus& sessions, const Database& db,
                          const Ontology& ontology, const EvalConfig& cfg, std::vector<DialogRun>* runs_out) {
  const auto dec = model_decoder(w);
  std::vector<DialogRun> runs;
  runs.reserve(sessions.size());
  for (const auto& s : sessions) runs.push_back(generate_dialog(s, vocab, dec, cfg, w.config.max_context));
  auto report = evaluate_runs(runs, sessions, db, ontology, cfg);
  if (runs_out) *runs_out = std::move(runs);
  return report;
}

std::string EvalReport::to_json() const {
  json j;
  j["bleu"] = bleu;
  j["inform"] = inform;
  j["success"] = success;
  j["match"] = match;
  j["succ_f1"] = succ_f1;
  j["combined"] = combined;
  j["dialogs"] = dialogs;
  j["truncated_turns"] = truncated_turns;
  json per = json::array();
  for (const auto& d : per_dialog) {
    per.push_back({{"session_id", d.session_id},
                   {"inform", d.inform},
                   {"success", d.success},
                   {"succ_f1", d.succ_f1},
                   {"entity", d.entity ? json(*d.entity) : json(nullptr)}});
  }
  j["per_dialog"] = per;
  if (probe) {
    j["probe"] = {{"sessions", probe->sessions},
                  {"repeat_rate", probe->repeat_rate},
                  {"advance_rate", probe->advance_rate},
                  {"other_rate", probe->other_rate}};
  } else {
    j["probe"] = nullptr;
  }
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  char buf[512];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-10s %8s\n", "metric", "value");
  out += buf;
  const std::pair<const char*, double> rows[] = {{"inform", inform}, {"success", success}, {"bleu", bleu},
                                                 {"combined", combined}, {"match", match}, {"succ_f1", succ_f1}};
  for (const auto& [k, v] : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %8.2f\n", k, v);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-10s %8zu\n", "dialogs", dialogs);
  out += buf;
  if (probe) {
    std::snprintf(buf, sizeof buf, "probe: %zu revision sessions, repeat %.3f, advance %.3f, other %.3f\n",
                  probe->sessions, probe->repeat_rate, probe->advance_rate, probe->other_rate);
    out += buf;
  }
  return out;
}

std::string prediction_dump(const std::vector<DialogRun>& runs) {
  std::string out;
  for (const auto& r : runs) {
    for (std::size_t t = 0; t < r.turns.size(); ++t) {
      json j = {{"session_id", r.session_id},
                {"turn", t},
                {"belief", r.turns[t].belief},
                {"acts", r.turns[t].acts},
                {"response", r.turns[t].response}};
      out += j.dump() + "\n";
    }
  }
  return out;
}

template SegmentDecoder model_decoder<float>(const Weights<float>&);
template SegmentDecoder model_decoder<double>(const Weights<double>&);
template EvalReport evaluate_model<float>(const Weights<float>&, const Vocabulary&, const Corpus&, const Database&,
                                          const Ontology&, const EvalConfig&, std::vector<DialogRun>*);
template EvalReport evaluate_model<double>(const Weights<double>&, const Vocabulary&, const Corpus&, const Database&,
                                           const Ontology&, const EvalConfig&, std::vector<DialogRun>*);

}  // namespace tpld
