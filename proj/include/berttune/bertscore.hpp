#pragma once

// Greedy-alignment cosine scoring between contextual embeddings: recall
// averages, over reference tokens, the best cosine against any candidate
// token; precision swaps the roles; F is their harmonic mean.

#include <span>
#include <vector>

#include "berttune/autodiff.hpp"
#include "berttune/lm_encoder.hpp"

namespace berttune {

struct ScoreTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
  /// Set when either side is empty after sentinel stripping; all scores are
  /// then zero.
  bool empty_input = false;
};

/// 2PR/(P+R) when P and R are both positive, else min(P, R). F stays in
/// [-1, 1] and never decreases when P or R grows.
double harmonic_f(double precision, double recall);

/// Row-major l x k cosine similarities (reference rows, candidate columns).
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

struct Alignment {
  std::vector<std::size_t> row_argmax;
  std::vector<double> row_max;
  std::vector<std::size_t> col_argmax;
  std::vector<double> col_max;
};

/// Per-row and per-column maxima with lowest-index tie breaking.
Alignment greedy_align(const SimilarityMatrix& sim);

/// Cosine similarities between the rows of two contextual embedding
/// matrices.
SimilarityMatrix cosine_similarities(const ad::Tensor& reference, const ad::Tensor& candidate);

/// Hard scoring of token sequences. bos/eos/pad are stripped from both sides.
ScoreTriple score_hard(std::span<const TokenId> candidate, std::span<const TokenId> reference,
                       const LmEncoder& encoder);

/// Scores as graph nodes (1x1 tensors).
struct SoftScore {
  ad::Tensor precision;
  ad::Tensor recall;
  ad::Tensor f;

  ScoreTriple values() const;
};

/// Scores already-contextualised embeddings (k x d candidate, l x d
/// reference). Both must be non-empty.
SoftScore score_contextual(ad::Graph& g, const ad::Tensor& candidate_ctx,
                           const ad::Tensor& reference_ctx);

/// Differentiable scoring of a sequence of expected embeddings (k x d)
/// against a reference token sequence. The candidate goes through the
/// encoder's contextualisation exactly like a hard sequence would.
SoftScore score_soft(ad::Graph& g, const ad::Tensor& soft_candidate,
                     std::span<const TokenId> reference, const LmEncoder& encoder);

}  // namespace berttune
