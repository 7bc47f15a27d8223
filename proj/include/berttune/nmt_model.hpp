#pragma once

// Desk-scale transformer encoder-decoder. Pre-norm layers, GELU feed-forward,
// sinusoidal positions, untied source/target embeddings. The target
// vocabulary is the language model's vocabulary.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "berttune/autodiff.hpp"
#include "berttune/beam_search.hpp"
#include "berttune/layers.hpp"
#include "berttune/vocabulary.hpp"

namespace berttune {

struct ModelConfig {
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t width = 32;
  std::size_t heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t max_length = 64;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct NamedParameter {
  std::string name;
  ad::Tensor tensor;
};

class Seq2SeqModel {
 public:
  /// Seeded initialisation: matrices uniform in +-1/sqrt(fan-in), zero
  /// biases, unit layer-norm gains.
  Seq2SeqModel(ModelConfig config, Vocabulary source, Vocabulary target, std::uint64_t seed);

  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;
  Seq2SeqModel(Seq2SeqModel&&) = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const Vocabulary& source_vocab() const { return source_; }
  const Vocabulary& target_vocab() const { return target_; }

  /// All trainable tensors in a fixed order; the handles share storage with
  /// the model.
  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  /// Closed-form parameter count for a configuration.
  static std::size_t expected_parameter_count(const ModelConfig& config, std::size_t source_vocab,
                                              std::size_t target_vocab);
  void zero_grad();

  /// Encoder states for a source id sequence (typically ending in eos).
  ad::Tensor encode(ad::Graph& g, std::span<const TokenId> source) const;
  /// Next-token logits for each position of a target prefix that starts
  /// with bos: row j predicts the token after prefix[0..j].
  ad::Tensor decode_logits(ad::Graph& g, const ad::Tensor& memory,
                           std::span<const TokenId> prefix) const;

  /// Teacher forcing. `reference` starts with bos; row j (j < |reference|-1)
  /// is conditioned on reference[0..j] and predicts reference[j+1].
  ad::Tensor teacher_forced_logits(ad::Graph& g, std::span<const TokenId> source,
                                   std::span<const TokenId> reference) const;
  ad::Tensor teacher_forced_probs(ad::Graph& g, std::span<const TokenId> source,
                                  std::span<const TokenId> reference) const;

  /// Log-probability scorer over generated prefixes for one source sentence.
  NextTokenScorer scorer(std::span<const TokenId> source) const;
  /// Longest generation allowed by the position table.
  std::size_t max_generation_length() const { return config_.max_length - 1; }

  TokenIds greedy_decode(std::span<const TokenId> source, std::size_t max_len) const;
  Hypothesis beam_decode(std::span<const TokenId> source, std::size_t beam_size,
                         double length_penalty, std::size_t max_len) const;

 private:
  ad::Tensor embed(ad::Graph& g, const ad::Tensor& table, std::span<const TokenId> ids) const;

  ModelConfig config_;
  Vocabulary source_;
  Vocabulary target_;

  ad::Tensor source_embeddings_;
  ad::Tensor target_embeddings_;
  ad::Tensor positions_;
  std::vector<nn::EncoderLayer> encoder_;
  nn::LayerNorm encoder_norm_;
  std::vector<nn::DecoderLayer> decoder_;
  nn::LayerNorm decoder_norm_;
  nn::Linear output_;

  std::vector<NamedParameter> params_;
};

}  // namespace berttune
