#include <gtest/gtest.h>

#include <cmath>

#include "berttune/beam_search.hpp"
#include "berttune/nmt_model.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace berttune;

namespace {

constexpr TokenId kEos = 2;

/// Log-softmax of pseudo-random logits keyed by the prefix.
NextTokenScorer random_scorer(std::uint64_t seed, std::size_t v) {
  return [seed, v](std::span<const TokenId> prefix) {
    std::uint64_t key = seed;
    for (TokenId t : prefix) key = derive_seed(key, static_cast<std::uint64_t>(t) + 1);
    Rng rng(key);
    std::vector<double> z(v);
    for (double& x : z) x = 2.0 * rng.normal();
    double m = z[0];
    for (double x : z) m = std::max(m, x);
    double s = 0;
    for (double x : z) s += std::exp(x - m);
    for (double& x : z) x = x - m - std::log(s);
    return z;
  };
}

std::function<std::vector<double>(const std::vector<int>&)> adapt(const NextTokenScorer& f) {
  return [f](const std::vector<int>& prefix) {
    TokenIds ids(prefix.begin(), prefix.end());
    return f(ids);
  };
}

void expect_matches_oracle(const NextTokenScorer& scorer, std::size_t v, double alpha) {
  const std::size_t max_len = 3;
  const auto beam = static_cast<std::size_t>(std::pow(v, max_len));
  const Hypothesis h = beam_search(scorer, kEos, beam, alpha, max_len);
  const auto all = oracle::enumerate_sequences(adapt(scorer), kEos, max_len);
  const auto best = oracle::exhaustive_best(all, alpha);
  EXPECT_EQ(std::vector<int>(h.tokens.begin(), h.tokens.end()), best.tokens);
  EXPECT_NEAR(h.log_prob, best.log_prob, 1e-12);
  EXPECT_EQ(h.length, best.length);
}

}  // namespace

TEST(BeamSearch, MatchesExhaustiveSearchOnRandomScorers) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    expect_matches_oracle(random_scorer(seed, 4), 4, 1.0);
    expect_matches_oracle(random_scorer(seed, 4), 4, 0.0);
  }
}

TEST(BeamSearch, MatchesExhaustiveSearchOnTinyModel) {
  const Vocabulary src = fixtures::words_vocab(3);
  const Vocabulary tgt = Vocabulary::with_sentinels(std::vector<std::string>{});
  ASSERT_EQ(tgt.size(), 4u);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Seq2SeqModel model(fixtures::tiny_config(), src, tgt, seed);
    // Sharpen the output layer so the search is not trivially flat.
    for (auto& p : model.parameters())
      if (p.name == "output.weight")
        for (double& w : p.tensor.mutable_values()) w *= 8.0;
    const TokenIds source{4, 6, 5, 2};
    expect_matches_oracle(model.scorer(source), 4, 1.0);
  }
}

TEST(BeamSearch, BeamOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto scorer = random_scorer(seed, 6);
    const Hypothesis g = greedy_search(scorer, kEos, 8);
    const Hypothesis b = beam_search(scorer, kEos, 1, 1.0, 8);
    ASSERT_EQ(g.tokens, b.tokens);
    ASSERT_EQ(g.log_prob, b.log_prob);
    ASSERT_EQ(g.length, b.length);
  }
}

TEST(BeamSearch, LengthPenaltyFavoursLongerHypothesis) {
  // "" + eos costs -1.0; "a" + eos costs -0.5 - 0.9 = -1.4 over two steps.
  NextTokenScorer scorer = [](std::span<const TokenId> prefix) {
    std::vector<double> lp(4, -50.0);
    if (prefix.empty()) {
      lp[kEos] = -1.0;
      lp[3] = -0.5;
    } else {
      lp[kEos] = -0.9;
    }
    return lp;
  };
  const Hypothesis a0 = beam_search(scorer, kEos, 2, 0.0, 5);
  const Hypothesis a1 = beam_search(scorer, kEos, 2, 1.0, 5);
  EXPECT_TRUE(a0.tokens.empty());
  EXPECT_EQ(a1.tokens, (TokenIds{3}));
  EXPECT_NEAR(a1.score, -0.7, 1e-12);
}

TEST(BeamSearch, RejectsBadArguments) {
  const auto scorer = random_scorer(1, 4);
  EXPECT_THROW(beam_search(scorer, kEos, 0, 1.0, 3), std::invalid_argument);
  EXPECT_THROW(beam_search(scorer, kEos, 2, -1.0, 3), std::invalid_argument);
}

TEST(BeamSearch, ZeroBudgetGivesEmptyHypothesis) {
  const Hypothesis h = beam_search(random_scorer(2, 4), kEos, 3, 1.0, 0);
  EXPECT_TRUE(h.tokens.empty());
  EXPECT_EQ(h.length, 0u);
}

TEST(BeamSearch, WiderBeamNeverLosesOnSearchScoreWithoutPenalty) {
  // With alpha = 0 the final choice maximises log-probability, and a beam of
  // V^L covers every sequence.
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto scorer = random_scorer(seed + 1000, 4);
    const double narrow = beam_search(scorer, kEos, 1, 0.0, 3).log_prob;
    const double wide = beam_search(scorer, kEos, 64, 0.0, 3).log_prob;
    EXPECT_GE(wide, narrow);
  }
}
