#pragma once

// Training checkpoints: `ckpt.json` manifest plus `ckpt.bin` holding the
// model parameters and, when present, the Adam moments as little-endian
// float32 in the order the manifest lists them. The language model is never
// part of a checkpoint.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "berttune/nmt_model.hpp"
#include "berttune/vocabulary.hpp"

namespace berttune {

struct OptimizerState {
  std::size_t step = 0;
  /// One entry per model parameter, same order and sizes.
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;

  bool empty() const { return first.empty(); }
  bool operator==(const OptimizerState&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  double valid_bleu = 0.0;
  double valid_fbert = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct StoredTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;

  bool operator==(const StoredTensor&) const = default;
};

struct Checkpoint {
  static constexpr int kSchemaVersion = 1;

  ModelConfig config;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  std::vector<StoredTensor> parameters;
  OptimizerState optimizer;

  std::string phase;  // "baseline" or "finetune"
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;

  /// SHA-256 of the binary blob this checkpoint serialises to.
  std::string blob_digest() const;
};

/// Snapshot of a model and optimizer. Values are rounded to float32 so the
/// in-memory checkpoint equals what a save/load round-trip produces.
Checkpoint capture(const Seq2SeqModel& model, const OptimizerState& optimizer);
/// Rounds a live optimizer state the same way capture() does.
void round_optimizer(OptimizerState& state);

Seq2SeqModel restore_model(const Checkpoint& ckpt);
/// Overwrites the parameter values of an existing model of matching shape.
void load_parameters(Seq2SeqModel& model, const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Accepts the directory or the ckpt.json path. Throws std::runtime_error on
/// checksum or layout problems.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace berttune
