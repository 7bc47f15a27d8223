#include "berttune/vocabulary.hpp"

#include <stdexcept>

namespace berttune {

Vocabulary::Vocabulary(std::vector<std::string> tokens, SentinelIds sentinels)
    : tokens_(std::move(tokens)), sentinels_(sentinels) {
  const TokenId n = static_cast<TokenId>(tokens_.size());
  for (TokenId s : {sentinels_.bos, sentinels_.pad, sentinels_.eos, sentinels_.unk}) {
    if (s < 0 || s >= n) {
      throw std::invalid_argument("vocabulary: sentinel index " + std::to_string(s) +
                                  " out of range");
    }
  }
  const TokenId ids[] = {sentinels_.bos, sentinels_.pad, sentinels_.eos, sentinels_.unk};
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (ids[i] == ids[j]) throw std::invalid_argument("vocabulary: sentinels are not distinct");
  for (TokenId i = 0; i < n; ++i) {
    if (!index_.emplace(tokens_[static_cast<std::size_t>(i)], i).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" +
                                  tokens_[static_cast<std::size_t>(i)] + "'");
    }
  }
}

Vocabulary Vocabulary::with_sentinels(std::span<const std::string> words) {
  std::vector<std::string> tokens{std::string(kBos), std::string(kPad), std::string(kEos),
                                  std::string(kUnk)};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary(std::move(tokens), SentinelIds{});
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? sentinels_.unk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

bool Vocabulary::is_structural(TokenId id) const {
  return id == sentinels_.bos || id == sentinels_.eos || id == sentinels_.pad;
}

TokenIds Vocabulary::encode(std::span<const std::string> words) const {
  TokenIds out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId i : ids) out.push_back(token(i));
  return out;
}

TokenIds Vocabulary::strip(std::span<const TokenId> ids) const {
  TokenIds out;
  for (TokenId i : ids)
    if (!is_structural(i)) out.push_back(i);
  return out;
}

}  // namespace berttune
