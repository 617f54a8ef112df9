#include "tpld/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "tpld/error.hpp"
#include "tpld/rng.hpp"
#include "tpld/text.hpp"

namespace tpld {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> v = {"<pad>",     "<unk>",        "<user>",       "<system>",
                                             "<bos_belief>", "<eos_belief>", "<bos_act>",  "<eos_act>",
                                             "<bos_resp>",   "<eos_resp>",   "<eos>"};
  return v;
}

Vocabulary::Vocabulary() {
  for (const auto& t : reserved_tokens()) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (t.empty() || t.find_first_of(" \t\r\n") != std::string::npos) {
      throw DataError("vocabulary token '" + t + "' is not a single whitespace-free token");
    }
    if (!v.index_.emplace(t, static_cast<TokenId>(v.tokens_.size())).second) {
      throw DataError("duplicate vocabulary token '" + t + "'");
    }
    v.tokens_.push_back(t);
  }
  return v;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& t : text::split_ws(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  const auto& reserved = reserved_tokens();
  if (lines.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), lines.begin())) {
    throw DataError(path.string() + ": vocabulary does not start with the reserved tokens");
  }
  return from_tokens(std::vector<std::string>(lines.begin() + static_cast<std::ptrdiff_t>(reserved.size()), lines.end()));
}

std::uint64_t Vocabulary::fingerprint() const { return fnv1a64(text::join(tokens_, "\n")); }

Vocabulary build_vocab(const Corpus& corpus) {
  std::map<std::string, std::size_t> counts;
  const Vocabulary reserved;
  for (const auto& s : corpus) {
    for (std::size_t t = 0; t < s.turns.size(); ++t) {
      const auto sample = linearize_turn(s, t, TargetKind::kAll);
      for (const auto* part : {&sample.context, &sample.target}) {
        for (auto& tok : text::split_ws(*part)) {
          if (!reserved.contains(tok)) ++counts[tok];
        }
      }
    }
  }
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(items.size());
  for (auto& [tok, n] : items) tokens.push_back(tok);
  return Vocabulary::from_tokens(tokens);
}

SpanEnds locate_span_ends(std::span<const TokenId> ids) {
  std::optional<std::size_t> pos[special::kEosResp + 1];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id < special::kBosBelief || id > special::kEosResp) continue;
    if (pos[id]) throw DataError("duplicated span marker at position " + std::to_string(i));
    pos[id] = i;
  }
  // Each present segment must be opened before it is closed, and segments must
  // follow belief -> act -> response.
  std::optional<std::size_t> last_close;
  SpanEnds ends;
  const TokenId pairs[3][2] = {{special::kBosBelief, special::kEosBelief},
                               {special::kBosAct, special::kEosAct},
                               {special::kBosResp, special::kEosResp}};
  for (int k = 0; k < 3; ++k) {
    const auto& open = pos[pairs[k][0]];
    const auto& close = pos[pairs[k][1]];
    if (close && open && *open > *close) throw DataError("span marker closes before it opens");
    if ((open && last_close && *open < *last_close) || (close && last_close && *close < *last_close)) {
      throw DataError("span markers out of order");
    }
    if (close) last_close = close;
  }
  ends.belief_end = pos[special::kEosBelief];
  ends.act_end = pos[special::kEosAct];
  ends.resp_end = pos[special::kEosResp];
  return ends;
}

}  // namespace tpld
