#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace berttune {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

struct SentinelIds {
  TokenId bos = 0;
  TokenId pad = 1;
  TokenId eos = 2;
  TokenId unk = 3;

  bool operator==(const SentinelIds&) const = default;
};

/// Ordered token inventory with bos/eos/pad/unk sentinels. Shared between
/// the translation model's target side and the language model.
class Vocabulary {
 public:
  static constexpr std::string_view kBos = "<s>";
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kEos = "</s>";
  static constexpr std::string_view kUnk = "<unk>";

  Vocabulary() = default;
  /// Throws std::invalid_argument when sentinels are missing, out of range or
  /// not distinct, or when token strings repeat.
  Vocabulary(std::vector<std::string> tokens, SentinelIds sentinels);

  /// The four sentinels at indices 0..3 followed by `words` in order.
  static Vocabulary with_sentinels(std::span<const std::string> words);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const;
  /// unk for unknown strings.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;

  const SentinelIds& sentinels() const { return sentinels_; }
  TokenId bos() const { return sentinels_.bos; }
  TokenId eos() const { return sentinels_.eos; }
  TokenId pad() const { return sentinels_.pad; }
  TokenId unk() const { return sentinels_.unk; }
  /// bos, eos or pad: tokens that carry no content and are stripped before
  /// scoring.
  bool is_structural(TokenId id) const;

  TokenIds encode(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;
  /// Removes bos/eos/pad.
  TokenIds strip(std::span<const TokenId> ids) const;

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && sentinels_ == other.sentinels_;
  }

 private:
  std::vector<std::string> tokens_;
  SentinelIds sentinels_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace berttune
