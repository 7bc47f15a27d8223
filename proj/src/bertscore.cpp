#include "berttune/bertscore.hpp"

#include <algorithm>
#include <stdexcept>

namespace berttune {

double harmonic_f(double precision, double recall) {
  if (precision > 0.0 && recall > 0.0) return 2.0 * precision * recall / (precision + recall);
  return std::min(precision, recall);
}

Alignment greedy_align(const SimilarityMatrix& sim) {
  Alignment a;
  a.row_argmax.assign(sim.rows, 0);
  a.row_max.assign(sim.rows, 0.0);
  a.col_argmax.assign(sim.cols, 0);
  a.col_max.assign(sim.cols, 0.0);
  if (sim.rows == 0 || sim.cols == 0) return a;
  for (std::size_t i = 0; i < sim.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < sim.cols; ++j)
      if (sim.at(i, j) > sim.at(i, best)) best = j;
    a.row_argmax[i] = best;
    a.row_max[i] = sim.at(i, best);
  }
  for (std::size_t j = 0; j < sim.cols; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < sim.rows; ++i)
      if (sim.at(i, j) > sim.at(best, j)) best = i;
    a.col_argmax[j] = best;
    a.col_max[j] = sim.at(best, j);
  }
  return a;
}

SimilarityMatrix cosine_similarities(const ad::Tensor& reference, const ad::Tensor& candidate) {
  ad::Graph g(false);
  ad::Tensor sim = ad::matmul_nt(g, ad::l2_normalize_rows(g, reference),
                                 ad::l2_normalize_rows(g, candidate));
  return SimilarityMatrix{sim.rows(), sim.cols(),
                          std::vector<double>(sim.values().begin(), sim.values().end())};
}

ScoreTriple SoftScore::values() const {
  return ScoreTriple{precision.item(), recall.item(), f.item(), false};
}

SoftScore score_contextual(ad::Graph& g, const ad::Tensor& candidate_ctx,
                           const ad::Tensor& reference_ctx) {
  if (candidate_ctx.rows() == 0 || reference_ctx.rows() == 0) {
    throw std::invalid_argument("score_contextual: empty sequence");
  }
  if (candidate_ctx.cols() != reference_ctx.cols()) {
    throw ad::ShapeError("score_contextual: candidate width " + std::to_string(candidate_ctx.cols()) +
                         " differs from reference width " + std::to_string(reference_ctx.cols()));
  }
  ad::Tensor sim = ad::matmul_nt(g, ad::l2_normalize_rows(g, reference_ctx),
                                 ad::l2_normalize_rows(g, candidate_ctx));
  SoftScore s;
  s.recall = ad::mean(g, ad::max_rows(g, sim));
  s.precision = ad::mean(g, ad::max_cols(g, sim));
  const double p = s.precision.item(), r = s.recall.item();
  if (p > 0.0 && r > 0.0) {
    s.f = ad::div(g, ad::scale(g, ad::mul(g, s.precision, s.recall), 2.0),
                  ad::add(g, s.precision, s.recall));
  } else {
    s.f = ad::scale(g, p <= r ? s.precision : s.recall, 1.0);
  }
  return s;
}

SoftScore score_soft(ad::Graph& g, const ad::Tensor& soft_candidate,
                     std::span<const TokenId> reference, const LmEncoder& encoder) {
  if (soft_candidate.cols() != encoder.dim()) {
    throw ad::ShapeError("score_soft: expected embeddings of width " +
                         std::to_string(soft_candidate.cols()) + " for an encoder of width " +
                         std::to_string(encoder.dim()));
  }
  const TokenIds ref = encoder.vocabulary().strip(reference);
  ad::Tensor ref_ctx = encoder.encode_tokens(ref);
  ad::Tensor cand_ctx = encoder.contextualize(g, soft_candidate);
  return score_contextual(g, cand_ctx, ref_ctx);
}

ScoreTriple score_hard(std::span<const TokenId> candidate, std::span<const TokenId> reference,
                       const LmEncoder& encoder) {
  const TokenIds cand = encoder.vocabulary().strip(candidate);
  const TokenIds ref = encoder.vocabulary().strip(reference);
  if (cand.empty() || ref.empty()) return ScoreTriple{0.0, 0.0, 0.0, true};

  const SimilarityMatrix sim =
      cosine_similarities(encoder.encode_tokens(ref), encoder.encode_tokens(cand));
  const Alignment a = greedy_align(sim);
  ScoreTriple s;
  for (double v : a.row_max) s.recall += v;
  for (double v : a.col_max) s.precision += v;
  s.recall /= static_cast<double>(sim.rows);
  s.precision /= static_cast<double>(sim.cols);
  s.f = harmonic_f(s.precision, s.recall);
  return s;
}

}  // namespace berttune
