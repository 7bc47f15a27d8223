#include "berttune/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace berttune {

double length_normalized(double log_prob, std::size_t length, double alpha) {
  if (length == 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), alpha);
}

Hypothesis greedy_search(const NextTokenScorer& scorer, TokenId eos, std::size_t max_len) {
  Hypothesis h;
  while (h.length < max_len) {
    const auto lp = scorer(h.tokens);
    const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.log_prob += lp[static_cast<std::size_t>(best)];
    ++h.length;
    if (best == eos) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(best);
  }
  return h;
}

Hypothesis beam_search(const NextTokenScorer& scorer, TokenId eos, std::size_t beam_size,
                       double length_penalty, std::size_t max_len) {
  if (beam_size == 0) throw std::invalid_argument("beam_search: beam size must be at least 1");
  if (length_penalty < 0.0) throw std::invalid_argument("beam_search: negative length penalty");

  struct Candidate {
    double log_prob;
    std::size_t parent;
    TokenId token;
  };

  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto lp = scorer(live[h].tokens);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        candidates.push_back({live[h].log_prob + lp[t], h, static_cast<TokenId>(t)});
      }
    }
    // Candidates are generated in (parent, token) order; a stable sort keeps
    // that order among equal scores.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.log_prob > b.log_prob; });
    if (candidates.size() > beam_size) candidates.resize(beam_size);

    std::vector<Hypothesis> next;
    for (const auto& c : candidates) {
      Hypothesis h = live[c.parent];
      h.log_prob = c.log_prob;
      ++h.length;
      if (c.token == eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (finished.size() >= beam_size) {
      live.clear();
      break;
    }
  }
  for (auto& h : live) finished.push_back(std::move(h));

  for (auto& h : finished) h.score = length_normalized(h.log_prob, h.length, length_penalty);
  auto best = finished.begin();
  for (auto it = finished.begin(); it != finished.end(); ++it)
    if (it->score > best->score) best = it;
  return *best;
}

}  // namespace berttune
