#pragma once

// Parallel text corpora: `<split>.src` / `<split>.tgt`, one sentence per
// line, lowercased and whitespace-tokenised on ingest.

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "berttune/vocabulary.hpp"

namespace berttune {

struct SentencePair {
  std::string source;
  std::string target;
};

struct ParallelCorpus {
  std::vector<SentencePair> train;
  std::vector<SentencePair> valid;
  std::vector<SentencePair> test;

  std::vector<SentencePair>& split(std::string_view name);
  const std::vector<SentencePair>& split(std::string_view name) const;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string lowercase(std::string_view text);
std::vector<std::string> tokenize(std::string_view line);
std::string join(std::span<const std::string> words);

/// Reads one split. Both files must exist with the same number of lines and
/// no blank lines; errors name the file and line.
std::vector<SentencePair> load_split(const std::filesystem::path& dir, std::string_view split);
/// Loads train/valid/test; a split whose files are absent is left empty.
ParallelCorpus load_corpus(const std::filesystem::path& dir);
void save_split(const std::vector<SentencePair>& pairs, const std::filesystem::path& dir,
                std::string_view split);
void save_corpus(const ParallelCorpus& corpus, const std::filesystem::path& dir);

/// Sentinels followed by the distinct tokens of the source side, most
/// frequent first (ties lexicographic).
Vocabulary build_source_vocabulary(std::span<const SentencePair> pairs);
/// Same ranking over the target side, for runs without a language model.
Vocabulary build_target_vocabulary(std::span<const SentencePair> pairs);

struct EncodedPair {
  TokenIds source;  // tokens + eos
  TokenIds target;  // bos + tokens + eos
};

EncodedPair encode_pair(const SentencePair& pair, const Vocabulary& source_vocab,
                        const Vocabulary& target_vocab);
std::vector<EncodedPair> encode_pairs(std::span<const SentencePair> pairs,
                                      const Vocabulary& source_vocab,
                                      const Vocabulary& target_vocab);
TokenIds encode_source(std::string_view sentence, const Vocabulary& source_vocab);

}  // namespace berttune
