#pragma once

// Synonym-cluster translation task. Source words name a cluster ("c7"); each
// target word is a synonym drawn uniformly from that cluster ("w7_2"). The
// identity-mode language model places a cluster's synonyms close to an
// orthonormal centroid, so synonyms score near 1 against each other and
// near 0 against other clusters.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "berttune/corpus.hpp"
#include "berttune/lm_encoder.hpp"

namespace berttune {

struct SyntheticSpec {
  std::size_t clusters = 20;
  std::size_t synonyms = 3;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
  std::size_t train_size = 2000;
  std::size_t valid_size = 200;
  std::size_t test_size = 200;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  /// Target vocabulary size including sentinels; extra slots become unused
  /// filler words. 0 means exactly clusters * synonyms + 4.
  std::size_t vocab_size = 0;
  /// Distance of synonym 0 from its centroid (the cluster's most central word).
  double central_offset = 0.01;
  /// Distance of the other synonyms from their centroid.
  double synonym_offset = 0.04;
  LmMode lm_mode = LmMode::identity;

  void validate() const;
};

struct GeometryReport {
  double min_within_cosine = 1.0;
  double max_cross_cosine = -1.0;
  double max_centroid_cosine = -1.0;
};

struct SyntheticTask {
  ParallelCorpus corpus;
  LmEncoder lm;
  GeometryReport geometry;
  std::size_t clusters = 0;
  std::size_t synonyms = 0;

  /// Cluster index of a target word, if it is a cluster word.
  std::optional<std::size_t> cluster_of(std::string_view target_word) const;
  /// Cluster indices of a target token sequence; sentinels are dropped and
  /// any other non-cluster token maps to an invalid index.
  std::vector<std::size_t> clusters_of(std::span<const TokenId> target_ids) const;
};

inline constexpr double kWithinClusterCosine = 0.99;
inline constexpr double kCrossClusterCosine = 0.1;

std::string cluster_word(std::size_t cluster);
std::string synonym_word(std::size_t cluster, std::size_t synonym);

/// Throws std::invalid_argument for infeasible specs (more clusters than
/// dimensions, vocabulary too small) and std::runtime_error if the generated
/// embeddings miss the cosine bounds.
SyntheticTask make_synthetic_corpus(const SyntheticSpec& spec);
/// Writes `<split>.src/.tgt` and `lm/model.json` + `lm/model.bin`.
void write_synthetic_task(const SyntheticTask& task, const std::filesystem::path& dir);

/// Fraction of pairs whose hypothesis matches the reference cluster by
/// cluster, position by position.
double cluster_exact_match(const SyntheticTask& task, std::span<const TokenIds> hypotheses,
                           std::span<const TokenIds> references);

}  // namespace berttune
