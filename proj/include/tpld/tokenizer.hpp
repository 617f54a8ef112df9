#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tpld/corpus.hpp"

namespace tpld {

using TokenId = std::int32_t;

// Reserved ids occupy the lowest slots of every vocabulary.
namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kUser = 2;
inline constexpr TokenId kSystem = 3;
inline constexpr TokenId kBosBelief = 4;
inline constexpr TokenId kEosBelief = 5;
inline constexpr TokenId kBosAct = 6;
inline constexpr TokenId kEosAct = 7;
inline constexpr TokenId kBosResp = 8;
inline constexpr TokenId kEosResp = 9;
inline constexpr TokenId kEos = 10;
inline constexpr TokenId kCount = 11;
}  // namespace special

const std::vector<std::string>& reserved_tokens();

class Vocabulary {
 public:
  Vocabulary();  // reserved tokens only
  // Reserved tokens followed by `tokens` in the given order. Throws on duplicates.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  TokenId id(std::string_view token) const;  // unk when absent
  const std::string& token(TokenId id) const;  // throws DataError when out of range
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  // One token per line; line number (0-based) is the id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  std::uint64_t fingerprint() const;
  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Covers every whitespace token of every linearized turn (context and full
// target). Order: reserved, then frequency descending, then lexicographic.
Vocabulary build_vocab(const Corpus& corpus);

struct SpanEnds {
  std::optional<std::size_t> belief_end;
  std::optional<std::size_t> act_end;
  std::optional<std::size_t> resp_end;
};

// Positions of the closing span markers. Throws DataError on duplicated or
// out-of-order markers.
SpanEnds locate_span_ends(std::span<const TokenId> ids);

}  // namespace tpld
