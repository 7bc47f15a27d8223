#pragma once

// Corpus BLEU with n-gram order 4, clipped counts, brevity penalty on corpus
// totals, and add-one smoothing for orders without any match.

#include <array>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace berttune {

inline constexpr std::size_t kBleuOrder = 4;

struct BleuStats {
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  /// Score in [0, 100].
  double score() const;
};

template <typename Token>
BleuStats bleu_stats(std::span<const std::vector<Token>> candidates,
                     std::span<const std::vector<Token>> references) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(candidates.size()) +
                                " candidates for " + std::to_string(references.size()) +
                                " references");
  }
  BleuStats s;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& cand = candidates[k];
    const auto& ref = references[k];
    s.candidate_length += cand.size();
    s.reference_length += ref.size();
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      std::map<std::vector<Token>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i)
        ++ref_counts[std::vector<Token>(ref.begin() + static_cast<std::ptrdiff_t>(i),
                                        ref.begin() + static_cast<std::ptrdiff_t>(i + n))];
      std::map<std::vector<Token>, std::size_t> cand_counts;
      for (std::size_t i = 0; i + n <= cand.size(); ++i)
        ++cand_counts[std::vector<Token>(cand.begin() + static_cast<std::ptrdiff_t>(i),
                                         cand.begin() + static_cast<std::ptrdiff_t>(i + n))];
      for (const auto& [gram, count] : cand_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) s.matches[n - 1] += std::min(count, it->second);
      }
      if (cand.size() >= n) s.totals[n - 1] += cand.size() - n + 1;
    }
  }
  return s;
}

template <typename Token>
double corpus_bleu(std::span<const std::vector<Token>> candidates,
                   std::span<const std::vector<Token>> references) {
  return bleu_stats(candidates, references).score();
}

inline double corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                          const std::vector<std::vector<std::string>>& references) {
  return corpus_bleu<std::string>(candidates, references);
}

}  // namespace berttune
