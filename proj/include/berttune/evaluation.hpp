#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "berttune/bertscore.hpp"
#include "berttune/checkpoint.hpp"
#include "berttune/corpus.hpp"
#include "berttune/lm_encoder.hpp"
#include "berttune/metrics_log.hpp"
#include "berttune/nmt_model.hpp"

namespace berttune {

struct DecodeSettings {
  std::size_t beam = 1;
  double length_penalty = 1.0;
  /// Generation budget is source length + this, capped by the model.
  std::size_t extra_length = 10;
  /// Decode at most this many sentences; 0 means all.
  std::size_t limit = 0;
};

struct DecodeMetrics {
  double bleu = 0.0;
  /// Mean sentence F_BERT (hard), zero when no LM was given.
  double fbert = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  /// Mean model log-probability of the chosen hypotheses (eos included).
  double mean_log_prob = 0.0;
  std::size_t sentences = 0;
  std::vector<TokenIds> hypotheses;
};

/// Decodes each source (greedy for beam 1, beam search otherwise) and scores
/// the outputs against the pair targets.
DecodeMetrics decode_metrics(const Seq2SeqModel& model, std::span<const EncodedPair> pairs,
                             const LmEncoder* lm, const DecodeSettings& settings);

struct EvalReport {
  double bleu = 0.0;
  double fbert = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double mean_log_prob = 0.0;
  std::size_t sentences = 0;
  std::size_t beam = 5;
  double length_penalty = 1.0;

  nlohmann::json to_json() const;
};

/// Beam-search evaluation of a checkpoint on a test set. Throws if the
/// checkpoint's target vocabulary is not the LM's vocabulary.
EvalReport evaluate(const Checkpoint& checkpoint, const LmEncoder& lm,
                    std::span<const SentencePair> testset, std::size_t beam = 5,
                    double length_penalty = 1.0);

struct EntropyReport {
  /// Entropy (nats) of the decoder softmax at every greedy decoding step.
  std::vector<double> entropies;
  /// bins + 1 edges spanning [0, ln V].
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
  double mean = 0.0;
  double median = 0.0;
  std::size_t vocab_size = 0;

  nlohmann::json to_json() const;
};

EntropyReport entropy_report(const Seq2SeqModel& model, std::span<const EncodedPair> testset,
                             std::size_t bins, std::size_t extra_length = 10);
/// bin_lower,bin_upper,count rows.
void write_entropy_csv(const EntropyReport& report, const std::filesystem::path& path);

struct Series {
  std::string metric;
  std::vector<std::pair<std::size_t, double>> points;
};

struct Curves {
  std::vector<Series> series;  // train_loss, valid_bleu, valid_fbert
  /// Steps at which an epoch ended.
  std::vector<std::size_t> epoch_boundaries;

  const Series& get(const std::string& metric) const;
  nlohmann::json to_json() const;
};

Curves export_curves(std::span<const MetricRow> rows);
/// Reads metrics.csv; malformed rows raise MetricsFormatError with the line.
Curves export_curves(const std::filesystem::path& metrics_csv);

}  // namespace berttune
