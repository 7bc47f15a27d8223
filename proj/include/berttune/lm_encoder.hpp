#pragma once

// Frozen contextual encoder standing in for the pretrained language model.
//
// On disk an encoder is a `model.json` manifest plus a `model.bin` blob of
// little-endian float32 tensors concatenated in the order the manifest lists
// them. Parameters are held in double precision but always carry values that
// are exactly representable in float32, so save/load round-trips are exact.

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "berttune/autodiff.hpp"
#include "berttune/embedding_table.hpp"
#include "berttune/layers.hpp"
#include "berttune/vocabulary.hpp"

namespace berttune {

enum class LmMode { identity, transformer };

struct LmConfig {
  LmMode mode = LmMode::transformer;
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t max_length = 64;
};

class LmLoadError : public std::runtime_error {
 public:
  enum class Kind { io, format, checksum, dimension, vocabulary };

  LmLoadError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class LmEncoder {
 public:
  static constexpr int kSchemaVersion = 1;

  /// Identity mode: contextualize returns its input unchanged.
  static LmEncoder identity(Vocabulary vocab, EmbeddingTable table,
                            std::size_t max_length = 64);
  /// Transformer mode with seeded random frozen layers (post-norm, GELU).
  static LmEncoder random_transformer(Vocabulary vocab, EmbeddingTable table,
                                      const LmConfig& config, std::uint64_t seed);
  /// Transformer mode from explicit tensors, as read from disk.
  static LmEncoder transformer(Vocabulary vocab, EmbeddingTable table, LmConfig config,
                               ad::Tensor positions, std::vector<nn::EncoderLayer> layers);

  const Vocabulary& vocabulary() const { return vocab_; }
  const EmbeddingTable& embeddings() const { return table_; }
  LmMode mode() const { return config_.mode; }
  const LmConfig& config() const { return config_; }
  std::size_t dim() const { return table_.dim(); }
  std::size_t vocab_size() const { return table_.vocab_size(); }
  std::size_t max_length() const { return config_.max_length; }

  /// Rows of E for each id, as an n x d constant tensor.
  ad::Tensor embed_tokens(std::span<const TokenId> ids) const;

  /// Contextual embeddings of a k x d sequence of static (or expected)
  /// embeddings. Differentiable with respect to the input; the encoder's own
  /// tensors never require gradients.
  ad::Tensor contextualize(ad::Graph& g, const ad::Tensor& static_seq) const;
  /// Value-only convenience: contextualize(embed_tokens(ids)).
  ad::Tensor encode_tokens(std::span<const TokenId> ids) const;

  /// Named tensors in file order.
  std::vector<std::pair<std::string, ad::Tensor>> tensors() const;
  /// SHA-256 over the raw bytes of every parameter in file order.
  std::string parameter_digest() const;

 private:
  LmEncoder(Vocabulary vocab, EmbeddingTable table, LmConfig config, ad::Tensor positions,
            std::vector<nn::EncoderLayer> layers);

  Vocabulary vocab_;
  EmbeddingTable table_;
  LmConfig config_;
  ad::Tensor positions_;
  std::vector<nn::EncoderLayer> layers_;
};

/// Reads `model.json` (or the manifest inside a directory) and its blob.
/// Throws LmLoadError with a kind per failure class.
LmEncoder load_lm(const std::filesystem::path& manifest);
/// Writes `model.json` and `model.bin` into `dir`.
void save_lm(const LmEncoder& encoder, const std::filesystem::path& dir);

std::string to_string(LmMode mode);

/// Little-endian float32 blob helpers shared with the checkpoint format.
std::vector<std::uint8_t> pack_float32(std::span<const double> values);
void append_float32(std::vector<std::uint8_t>& blob, std::span<const double> values);
std::vector<double> unpack_float32(std::span<const std::uint8_t> bytes);
/// Rounds each value to the nearest float32.
void round_to_float32(std::span<double> values);

}  // namespace berttune
