#pragma once

#include <functional>
#include <span>
#include <vector>

#include "berttune/vocabulary.hpp"

namespace berttune {

/// Log-probabilities over the vocabulary for the next token, given the tokens
/// generated so far (bos excluded).
using NextTokenScorer = std::function<std::vector<double>(std::span<const TokenId> prefix)>;

struct Hypothesis {
  /// Generated tokens, eos excluded.
  TokenIds tokens;
  double log_prob = 0.0;
  /// Generated length including the terminating eos, if any.
  std::size_t length = 0;
  bool finished = false;
  double score = 0.0;
};

/// log_prob / length^alpha; zero-length hypotheses score their raw
/// log-probability.
double length_normalized(double log_prob, std::size_t length, double alpha);

/// Repeatedly appends the argmax token (lowest index on ties) until eos or
/// `max_len` generated tokens.
Hypothesis greedy_search(const NextTokenScorer& scorer, TokenId eos, std::size_t max_len);

/// Beam search over cumulative log-probability. Each step expands every live
/// hypothesis, keeps the best `beam_size` expansions (ties: earlier
/// hypothesis, then lower token id), and moves eos-terminated ones to the
/// finished set. Search stops once `beam_size` hypotheses have finished, no
/// live hypotheses remain, or `max_len` tokens were generated; hypotheses
/// still live at that point count as finished. The result is the finished
/// hypothesis with the highest length-normalised score (first on ties).
Hypothesis beam_search(const NextTokenScorer& scorer, TokenId eos, std::size_t beam_size,
                       double length_penalty, std::size_t max_len);

}  // namespace berttune
