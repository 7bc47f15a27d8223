#include "berttune/softpred.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace berttune::softpred {

SoftDistribution::SoftDistribution(std::vector<double> probabilities)
    : p_(std::move(probabilities)) {
  if (p_.empty()) throw std::invalid_argument("soft distribution: empty vector");
  double total = 0.0;
  for (std::size_t i = 0; i < p_.size(); ++i) {
    if (!(p_[i] >= 0.0)) {
      throw std::invalid_argument("soft distribution: entry " + std::to_string(i) +
                                  " is negative or NaN");
    }
    total += p_[i];
    if (p_[i] > 0.0) support_.push_back(i);
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("soft distribution: entries sum to " + std::to_string(total));
  }
}

std::string to_string(PredictionVariant v) {
  switch (v) {
    case PredictionVariant::dense: return "dense";
    case PredictionVariant::sparsemax: return "sparsemax";
    case PredictionVariant::gumbel_softmax: return "gumbel";
  }
  return "unknown";
}

PredictionVariant parse_variant(std::string_view name) {
  if (name == "dense") return PredictionVariant::dense;
  if (name == "sparsemax") return PredictionVariant::sparsemax;
  if (name == "gumbel" || name == "gumbel-softmax") return PredictionVariant::gumbel_softmax;
  throw std::invalid_argument("unknown prediction mode '" + std::string(name) + "'");
}

void PredictionMode::validate() const {
  if (variant == PredictionVariant::gumbel_softmax && !(tau > 0.0)) {
    throw std::invalid_argument("gumbel-softmax temperature must be positive");
  }
}

// ---------------------------------------------------------------------------

void softmax_into(std::span<const double> logits, double temperature, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    total += out[i];
  }
  for (double& v : out) v /= total;
}

void sparsemax_into(std::span<const double> logits, std::span<double> out) {
  const std::size_t n = logits.size();
  // Shifting by the max leaves the projection unchanged and keeps the
  // threshold arithmetic independent of the logits' offset.
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = logits[i] - mx;
  std::vector<double> sorted = z;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  double cumulative = 0.0;
  double support_sum = 0.0;
  std::size_t k = 0;
  for (std::size_t j = 0; j < n; ++j) {
    cumulative += sorted[j];
    if (1.0 + static_cast<double>(j + 1) * sorted[j] > cumulative) {
      k = j + 1;
      support_sum = cumulative;
    }
  }
  const double theta = (support_sum - 1.0) / static_cast<double>(k);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::max(z[i] - theta, 0.0);
}

void sparsemax_backward_into(std::span<const double> output,
                             std::span<const double> upstream, std::span<double> grad) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    if (output[i] > 0.0) {
      total += upstream[i];
      ++count;
    }
  }
  if (count == 0) throw std::logic_error("sparsemax_backward: empty support");
  const double avg = total / static_cast<double>(count);
  for (std::size_t i = 0; i < output.size(); ++i) {
    if (output[i] > 0.0) grad[i] += upstream[i] - avg;
  }
}

void gumbel_softmax_into(std::span<const double> probs, std::span<const double> noise,
                         double tau, std::span<double> out) {
  std::vector<double> scores(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    scores[i] = std::log(std::max(probs[i], kProbabilityFloor)) + noise[i];
  }
  softmax_into(scores, tau, out);
}

// ---------------------------------------------------------------------------

SoftDistribution softmax_temperature(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw std::invalid_argument("softmax_temperature: empty logits");
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("softmax_temperature: temperature must be positive");
  }
  std::vector<double> out(logits.size());
  softmax_into(logits, temperature, out);
  return SoftDistribution(std::move(out));
}

SoftDistribution sparsemax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("sparsemax: empty logits");
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) {
      throw std::invalid_argument("sparsemax: non-finite logit at index " + std::to_string(i));
    }
  }
  std::vector<double> out(logits.size());
  sparsemax_into(logits, out);
  return SoftDistribution(std::move(out));
}

std::vector<double> sparsemax_backward(const SoftDistribution& output,
                                       std::span<const double> upstream) {
  if (upstream.size() != output.size()) {
    throw std::invalid_argument("sparsemax_backward: upstream length mismatch");
  }
  std::vector<double> grad(output.size(), 0.0);
  sparsemax_backward_into(output.probabilities(), upstream, grad);
  return grad;
}

std::vector<double> gumbel_noise(std::size_t n, Rng& rng) {
  std::vector<double> g(n);
  for (double& v : g) v = -std::log(-std::log(rng.uniform_open()));
  return g;
}

SoftDistribution gumbel_softmax(const SoftDistribution& probs, std::span<const double> noise,
                                double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be positive");
  if (noise.size() != probs.size()) {
    throw std::invalid_argument("gumbel_softmax: noise length mismatch");
  }
  std::vector<double> out(probs.size());
  gumbel_softmax_into(probs.probabilities(), noise, tau, out);
  return SoftDistribution(std::move(out));
}

SoftDistribution gumbel_softmax(const SoftDistribution& probs, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be positive");
  const auto noise = gumbel_noise(probs.size(), rng);
  return gumbel_softmax(probs, noise, tau);
}

double entropy(std::span<const double> probabilities) {
  double h = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double entropy(const SoftDistribution& dist) { return entropy(dist.probabilities()); }

std::vector<double> expected_embedding(const SoftDistribution& dist,
                                       const EmbeddingTable& table) {
  if (dist.size() != table.vocab_size()) {
    throw std::invalid_argument("expected_embedding: distribution over " +
                                std::to_string(dist.size()) + " entries for a table of " +
                                std::to_string(table.vocab_size()) + " rows");
  }
  std::vector<double> out(table.dim(), 0.0);
  for (std::size_t i : dist.support()) {
    auto row = table.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += dist[i] * row[j];
  }
  return out;
}

ad::Tensor expected_embeddings(ad::Graph& g, const ad::Tensor& probs,
                               const EmbeddingTable& table) {
  if (probs.cols() != table.vocab_size()) {
    throw ad::ShapeError("expected_embeddings: probabilities over " +
                         std::to_string(probs.cols()) + " entries for a table of " +
                         std::to_string(table.vocab_size()) + " rows");
  }
  return ad::matmul(g, probs, table.matrix());
}

ad::Tensor soft_predictions(ad::Graph& g, const ad::Tensor& logits,
                            const PredictionMode& mode, Rng& rng) {
  mode.validate();
  switch (mode.variant) {
    case PredictionVariant::dense:
      return ad::softmax_rows(g, logits);
    case PredictionVariant::sparsemax:
      return ad::sparsemax_rows(g, logits);
    case PredictionVariant::gumbel_softmax: {
      ad::Tensor probs = ad::softmax_rows(g, logits);
      std::vector<double> noise;
      noise.reserve(probs.size());
      for (std::size_t r = 0; r < probs.rows(); ++r) {
        auto row = gumbel_noise(probs.cols(), rng);
        noise.insert(noise.end(), row.begin(), row.end());
      }
      return ad::gumbel_softmax_rows(g, probs, ad::Tensor(probs.shape(), std::move(noise)),
                                     mode.tau);
    }
  }
  throw std::logic_error("unreachable prediction variant");
}

}  // namespace berttune::softpred
