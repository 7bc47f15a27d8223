#include "berttune/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace berttune {

std::vector<SentencePair>& ParallelCorpus::split(std::string_view name) {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

const std::vector<SentencePair>& ParallelCorpus::split(std::string_view name) const {
  return const_cast<ParallelCorpus*>(this)->split(name);
}

std::string lowercase(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> tokenize(std::string_view line) {
  std::istringstream in(lowercase(line));
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

std::string join(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::size_t number = 0;
  for (std::string line; std::getline(in, line);) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (tokenize(line).empty()) {
      throw CorpusError(path.string() + ":" + std::to_string(number) + ": empty line");
    }
    lines.push_back(lowercase(line));
  }
  return lines;
}

}  // namespace

std::vector<SentencePair> load_split(const std::filesystem::path& dir, std::string_view split) {
  const auto src_path = dir / (std::string(split) + ".src");
  const auto tgt_path = dir / (std::string(split) + ".tgt");
  const auto src = read_lines(src_path);
  const auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size()) {
    throw CorpusError(std::string(split) + ": " + std::to_string(src.size()) + " source lines but " +
                      std::to_string(tgt.size()) + " target lines");
  }
  std::vector<SentencePair> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) pairs.push_back({src[i], tgt[i]});
  return pairs;
}

ParallelCorpus load_corpus(const std::filesystem::path& dir) {
  ParallelCorpus corpus;
  for (const char* split : {"train", "valid", "test"}) {
    if (std::filesystem::exists(dir / (std::string(split) + ".src")) ||
        std::filesystem::exists(dir / (std::string(split) + ".tgt"))) {
      corpus.split(split) = load_split(dir, split);
    }
  }
  return corpus;
}

void save_split(const std::vector<SentencePair>& pairs, const std::filesystem::path& dir,
                std::string_view split) {
  std::filesystem::create_directories(dir);
  std::ofstream src(dir / (std::string(split) + ".src"));
  std::ofstream tgt(dir / (std::string(split) + ".tgt"));
  for (const auto& p : pairs) {
    src << p.source << "\n";
    tgt << p.target << "\n";
  }
  if (!src || !tgt) throw CorpusError("cannot write split " + std::string(split));
}

void save_corpus(const ParallelCorpus& corpus, const std::filesystem::path& dir) {
  for (const char* split : {"train", "valid", "test"}) save_split(corpus.split(split), dir, split);
}

namespace {

Vocabulary ranked_vocabulary(std::span<const SentencePair> pairs, bool source_side) {
  std::map<std::string, std::size_t> counts;
  for (const auto& p : pairs)
    for (auto& w : tokenize(source_side ? p.source : p.target)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, c] : ranked) {
    if (w == Vocabulary::kBos || w == Vocabulary::kEos || w == Vocabulary::kPad ||
        w == Vocabulary::kUnk)
      continue;
    words.push_back(w);
  }
  return Vocabulary::with_sentinels(words);
}

}  // namespace

Vocabulary build_source_vocabulary(std::span<const SentencePair> pairs) {
  return ranked_vocabulary(pairs, true);
}

Vocabulary build_target_vocabulary(std::span<const SentencePair> pairs) {
  return ranked_vocabulary(pairs, false);
}

TokenIds encode_source(std::string_view sentence, const Vocabulary& source_vocab) {
  TokenIds ids = source_vocab.encode(tokenize(sentence));
  ids.push_back(source_vocab.eos());
  return ids;
}

EncodedPair encode_pair(const SentencePair& pair, const Vocabulary& source_vocab,
                        const Vocabulary& target_vocab) {
  EncodedPair e;
  e.source = encode_source(pair.source, source_vocab);
  e.target.push_back(target_vocab.bos());
  for (TokenId t : target_vocab.encode(tokenize(pair.target))) e.target.push_back(t);
  e.target.push_back(target_vocab.eos());
  return e;
}

std::vector<EncodedPair> encode_pairs(std::span<const SentencePair> pairs,
                                      const Vocabulary& source_vocab,
                                      const Vocabulary& target_vocab) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, source_vocab, target_vocab));
  return out;
}

}  // namespace berttune
