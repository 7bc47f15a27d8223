#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "berttune/autodiff.hpp"
#include "berttune/embedding_table.hpp"
#include "berttune/lm_encoder.hpp"
#include "berttune/nmt_model.hpp"
#include "berttune/rng.hpp"
#include "berttune/vocabulary.hpp"

namespace fixtures {

using namespace berttune;

/// Sentinels plus words w0..w{n-1}.
inline Vocabulary words_vocab(std::size_t n) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < n; ++i) words.push_back("w" + std::to_string(i));
  return Vocabulary::with_sentinels(words);
}

inline std::vector<double> gaussian(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline EmbeddingTable random_table(std::size_t v, std::size_t d, std::uint64_t seed) {
  auto values = gaussian(v * d, seed);
  round_to_float32(values);
  return EmbeddingTable(v, d, std::move(values));
}

inline LmEncoder identity_lm(std::size_t words, std::size_t d, std::uint64_t seed) {
  Vocabulary vocab = words_vocab(words);
  const std::size_t v = vocab.size();
  return LmEncoder::identity(std::move(vocab), random_table(v, d, seed));
}

inline LmEncoder transformer_lm(std::size_t words, std::size_t d, std::uint64_t seed,
                                std::size_t layers = 1) {
  Vocabulary vocab = words_vocab(words);
  const std::size_t v = vocab.size();
  LmConfig config{LmMode::transformer, layers, 2, 2 * d, 16};
  return LmEncoder::random_transformer(std::move(vocab), random_table(v, d, seed), config,
                                       seed + 1);
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.width = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.max_length = 16;
  return c;
}

inline ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed, double scale = 1.0) {
  return ad::Tensor(shape, gaussian(shape.rows * shape.cols, seed, scale));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("berttune_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
