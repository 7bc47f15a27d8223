#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "berttune/autodiff.hpp"
#include "berttune/checkpoint.hpp"
#include "berttune/corpus.hpp"
#include "berttune/lm_encoder.hpp"
#include "berttune/metrics_log.hpp"
#include "berttune/nmt_model.hpp"
#include "berttune/rng.hpp"
#include "berttune/softpred.hpp"

namespace berttune {

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  double label_smoothing = 0.1;
  /// Linear warm-up length of the inverse-square-root schedule.
  std::size_t warmup_steps = 200;
  /// When false the learning rate is constant.
  bool inverse_sqrt_schedule = true;
  std::size_t patience = 3;
  std::size_t max_epochs = 30;
  /// Stop after this many optimisation steps; 0 means no limit.
  std::size_t max_steps = 0;
  /// Run validation every this many steps in addition to epoch ends; 0
  /// disables intermediate validation.
  std::size_t eval_every = 0;
  /// Validate on at most this many sentences; 0 means all.
  std::size_t valid_limit = 0;
  softpred::PredictionMode mode;
  std::uint64_t seed = 0;

  void validate() const;

  /// Baseline recipe: lr 5e-4 with warm-up and inverse-sqrt decay.
  static TrainConfig baseline_defaults();
  /// Fine-tuning recipe: constant lr 5e-5, 5 epochs, gumbel-softmax tau 0.1.
  static TrainConfig finetune_defaults();
};

/// Thrown by adam_step before any parameter changes.
class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& parameter)
      : std::runtime_error("non-finite gradient in parameter '" + parameter + "'"),
        parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

/// Mean over non-pad positions of
///   -[(1 - eps) log p(y_j) + (eps / V) sum_i log p_i]
/// with probabilities floored at 1e-12. `probs` is l x V, `targets` has l
/// entries.
ad::Tensor label_smoothed_nll(ad::Graph& g, const ad::Tensor& probs,
                              std::span<const TokenId> targets, double epsilon, TokenId pad);

/// -mean_F over the batch. Each pair goes through teacher forcing, the mode's
/// soft prediction, expected embeddings and soft scoring against its
/// reference; the rows that predict the final eos are not part of the soft
/// candidate. Throws if the model's target vocabulary differs from the LM's.
ad::Tensor bertscore_loss(ad::Graph& g, const Seq2SeqModel& model, const LmEncoder& lm,
                          std::span<const EncodedPair> batch,
                          const softpred::PredictionMode& mode, Rng& rng);

/// Batch label-smoothed NLL over all target positions.
ad::Tensor nll_loss(ad::Graph& g, const Seq2SeqModel& model, std::span<const EncodedPair> batch,
                    double epsilon);

/// Bias-corrected Adam. Missing gradients count as zero. Initialises the
/// state on first use.
void adam_step(std::vector<NamedParameter>& params, OptimizerState& state,
               const TrainConfig& config, double learning_rate);

/// Learning rate at a 1-based step.
double scheduled_learning_rate(const TrainConfig& config, std::size_t step);

/// Validation scores of a model, as used for model selection.
struct ValidationScores {
  double bleu = 0.0;
  double fbert = 0.0;
};
using Validator = std::function<ValidationScores(const Seq2SeqModel&)>;

struct TrainingData {
  std::vector<EncodedPair> train;
  std::vector<EncodedPair> valid;
};

struct TrainOptions {
  /// Replaces greedy-decode validation (BLEU and, with an LM, F_BERT).
  Validator validator;
  /// Checkpoints (best/ and last/) and metrics.csv are written here.
  std::optional<std::filesystem::path> out_dir;
  /// Continue a baseline run from an epoch-end checkpoint.
  const Checkpoint* resume = nullptr;
  /// Progress lines; silent when empty.
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<MetricRow> metrics;
  std::size_t validations = 0;
  std::size_t epochs_run = 0;
  /// Training loss of each completed epoch, in order.
  std::vector<double> epoch_losses;
};

/// Label-smoothed NLL training with early stopping on validation BLEU.
/// `lm` is optional and only used to report validation F_BERT.
TrainResult train_baseline(const TrainingData& data, const Vocabulary& source_vocab,
                           const Vocabulary& target_vocab, const ModelConfig& model_config,
                           const TrainConfig& config, const LmEncoder* lm,
                           const TrainOptions& options = {});

/// Fine-tuning with L = -F_BERT starting from a checkpoint. Selection is by
/// validation F_BERT; the starting model is evaluated as step 0 and is the
/// initial best. The LM is only read.
TrainResult finetune(const Checkpoint& start, const TrainingData& data, const LmEncoder& lm,
                     const TrainConfig& config, const TrainOptions& options = {});

}  // namespace berttune
