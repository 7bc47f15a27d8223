#pragma once

// Soft replacements for the argmax over the decoder's output distribution:
// temperature softmax, sparsemax, Gumbel-Softmax, plus entropy and the
// expected embedding that turns a distribution into an LM input vector.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "berttune/autodiff.hpp"
#include "berttune/embedding_table.hpp"
#include "berttune/rng.hpp"

namespace berttune::softpred {

/// Probabilities are clamped to this value before taking a log.
inline constexpr double kProbabilityFloor = 1e-12;

/// A probability vector over the vocabulary. Construction validates that the
/// entries are non-negative and sum to one within 1e-9.
class SoftDistribution {
 public:
  explicit SoftDistribution(std::vector<double> probabilities);

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> probabilities() const { return p_; }
  /// Indices of the strictly positive entries, ascending.
  const std::vector<std::size_t>& support() const { return support_; }

 private:
  std::vector<double> p_;
  std::vector<std::size_t> support_;
};

enum class PredictionVariant { dense, sparsemax, gumbel_softmax };

std::string to_string(PredictionVariant v);
/// Accepts "dense", "sparsemax", "gumbel" and "gumbel-softmax".
PredictionVariant parse_variant(std::string_view name);

struct PredictionMode {
  PredictionVariant variant = PredictionVariant::dense;
  /// Used by gumbel-softmax only.
  double tau = 0.1;

  /// Throws if tau is not positive for the gumbel-softmax variant.
  void validate() const;
};

SoftDistribution softmax_temperature(std::span<const double> logits, double temperature);
SoftDistribution sparsemax(std::span<const double> logits);
/// Jacobian-vector product of sparsemax at `output`: the upstream gradient
/// minus its mean over the support, zero outside the support.
std::vector<double> sparsemax_backward(const SoftDistribution& output,
                                       std::span<const double> upstream);

/// Standard Gumbel samples -log(-log(u)), u ~ Uniform(0, 1).
std::vector<double> gumbel_noise(std::size_t n, Rng& rng);
SoftDistribution gumbel_softmax(const SoftDistribution& probs, double tau, Rng& rng);
/// Deterministic form with caller-provided noise.
SoftDistribution gumbel_softmax(const SoftDistribution& probs,
                                std::span<const double> noise, double tau);

/// Shannon entropy in nats with 0 log 0 = 0.
double entropy(const SoftDistribution& dist);
double entropy(std::span<const double> probabilities);

/// sum_i p_i * E[i].
std::vector<double> expected_embedding(const SoftDistribution& dist,
                                       const EmbeddingTable& table);
/// Row-wise expected embeddings of a k x V probability matrix; differentiable
/// with respect to the probabilities only.
ad::Tensor expected_embeddings(ad::Graph& g, const ad::Tensor& probs,
                               const EmbeddingTable& table);

/// Converts decoder logits (k x V) into the soft predictions of a mode:
/// dense -> softmax, sparsemax -> sparsemax of the logits, gumbel-softmax ->
/// Gumbel-Softmax of the softmax probabilities with one fresh noise draw per
/// row taken from `rng`.
ad::Tensor soft_predictions(ad::Graph& g, const ad::Tensor& logits,
                            const PredictionMode& mode, Rng& rng);

// Row kernels shared with the autodiff primitives.
void softmax_into(std::span<const double> logits, double temperature, std::span<double> out);
void sparsemax_into(std::span<const double> logits, std::span<double> out);
/// Accumulates the sparsemax Jacobian-vector product into `grad`.
void sparsemax_backward_into(std::span<const double> output,
                             std::span<const double> upstream, std::span<double> grad);
void gumbel_softmax_into(std::span<const double> probs, std::span<const double> noise,
                         double tau, std::span<double> out);

}  // namespace berttune::softpred
