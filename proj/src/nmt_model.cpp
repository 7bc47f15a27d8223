#include "berttune/nmt_model.hpp"

#include <cmath>
#include <stdexcept>

namespace berttune {

void ModelConfig::validate() const {
  if (encoder_layers == 0 || decoder_layers == 0 || width == 0 || heads == 0 || ffn_dim == 0 ||
      max_length < 2) {
    throw std::invalid_argument("model config: dimensions must be positive");
  }
  if (width % heads != 0) {
    throw std::invalid_argument("model config: width " + std::to_string(width) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
}

Seq2SeqModel::Seq2SeqModel(ModelConfig config, Vocabulary source, Vocabulary target,
                           std::uint64_t seed)
    : config_(config), source_(std::move(source)), target_(std::move(target)) {
  config_.validate();
  if (source_.size() == 0 || target_.size() == 0) {
    throw std::invalid_argument("model: empty vocabulary");
  }
  Rng rng(seed);
  const std::size_t d = config_.width;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto table = [&](std::size_t rows) {
    std::vector<double> v(rows * d);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return ad::Tensor({rows, d}, std::move(v), true);
  };
  source_embeddings_ = table(source_.size());
  target_embeddings_ = table(target_.size());
  positions_ = nn::sinusoidal_positions(config_.max_length, d);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i)
    encoder_.push_back(nn::make_encoder_layer(d, config_.heads, config_.ffn_dim, rng, true));
  encoder_norm_ = nn::make_layer_norm(d, true);
  for (std::size_t i = 0; i < config_.decoder_layers; ++i)
    decoder_.push_back(nn::make_decoder_layer(d, config_.heads, config_.ffn_dim, rng, true));
  decoder_norm_ = nn::make_layer_norm(d, true);
  output_ = nn::make_linear(d, target_.size(), rng, true);

  auto add = [this](const std::string& name, ad::Tensor& t) { params_.push_back({name, t}); };
  add("source_embeddings", source_embeddings_);
  add("target_embeddings", target_embeddings_);
  for (std::size_t i = 0; i < encoder_.size(); ++i)
    nn::visit(encoder_[i], "encoder." + std::to_string(i), add);
  nn::visit(encoder_norm_, "encoder.norm", add);
  for (std::size_t i = 0; i < decoder_.size(); ++i)
    nn::visit(decoder_[i], "decoder." + std::to_string(i), add);
  nn::visit(decoder_norm_, "decoder.norm", add);
  nn::visit(output_, "output", add);
}

std::size_t Seq2SeqModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::size_t Seq2SeqModel::expected_parameter_count(const ModelConfig& c, std::size_t vs,
                                                   std::size_t vt) {
  const std::size_t d = c.width, f = c.ffn_dim;
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t norm = 2 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t enc_layer = attention + ffn + 2 * norm;
  const std::size_t dec_layer = 2 * attention + ffn + 3 * norm;
  return vs * d + vt * d + c.encoder_layers * enc_layer + norm + c.decoder_layers * dec_layer +
         norm + d * vt + vt;
}

void Seq2SeqModel::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

ad::Tensor Seq2SeqModel::embed(ad::Graph& g, const ad::Tensor& table,
                               std::span<const TokenId> ids) const {
  if (ids.size() > config_.max_length) {
    throw std::invalid_argument("sequence of length " + std::to_string(ids.size()) +
                                " exceeds the model's maximum of " +
                                std::to_string(config_.max_length));
  }
  ad::Tensor x = ad::scale(g, ad::gather_rows(g, table, ids),
                           std::sqrt(static_cast<double>(config_.width)));
  return ad::add(g, x, ad::slice_rows(g, positions_, 0, ids.size()));
}

ad::Tensor Seq2SeqModel::encode(ad::Graph& g, std::span<const TokenId> source) const {
  if (source.empty()) throw std::invalid_argument("encode: empty source");
  ad::Tensor x = embed(g, source_embeddings_, source);
  for (const auto& layer : encoder_) x = nn::encoder_layer(g, layer, x, nn::NormPlacement::pre);
  return nn::layer_norm(g, encoder_norm_, x);
}

ad::Tensor Seq2SeqModel::decode_logits(ad::Graph& g, const ad::Tensor& memory,
                                       std::span<const TokenId> prefix) const {
  if (prefix.empty()) throw std::invalid_argument("decode_logits: empty prefix");
  ad::Tensor x = embed(g, target_embeddings_, prefix);
  for (const auto& layer : decoder_) x = nn::decoder_layer(g, layer, x, memory);
  return nn::linear(g, output_, nn::layer_norm(g, decoder_norm_, x));
}

ad::Tensor Seq2SeqModel::teacher_forced_logits(ad::Graph& g, std::span<const TokenId> source,
                                               std::span<const TokenId> reference) const {
  if (reference.empty() || reference.front() != target_.bos()) {
    throw std::invalid_argument("teacher forcing: reference must begin with bos");
  }
  if (reference.size() < 2) throw std::invalid_argument("teacher forcing: nothing to predict");
  ad::Tensor memory = encode(g, source);
  return decode_logits(g, memory, reference.first(reference.size() - 1));
}

ad::Tensor Seq2SeqModel::teacher_forced_probs(ad::Graph& g, std::span<const TokenId> source,
                                              std::span<const TokenId> reference) const {
  return ad::softmax_rows(g, teacher_forced_logits(g, source, reference));
}

NextTokenScorer Seq2SeqModel::scorer(std::span<const TokenId> source) const {
  ad::Graph g(false);
  ad::Tensor memory = encode(g, source);
  const TokenId bos = target_.bos();
  return [this, memory, bos](std::span<const TokenId> generated) {
    TokenIds prefix;
    prefix.reserve(generated.size() + 1);
    prefix.push_back(bos);
    prefix.insert(prefix.end(), generated.begin(), generated.end());
    ad::Graph step(false);
    ad::Tensor logits = decode_logits(step, memory, prefix);
    ad::Tensor last = ad::slice_rows(step, logits, logits.rows() - 1, 1);
    ad::Tensor lp = ad::log_softmax_rows(step, last);
    return std::vector<double>(lp.values().begin(), lp.values().end());
  };
}

TokenIds Seq2SeqModel::greedy_decode(std::span<const TokenId> source, std::size_t max_len) const {
  return greedy_search(scorer(source), target_.eos(), std::min(max_len, max_generation_length()))
      .tokens;
}

Hypothesis Seq2SeqModel::beam_decode(std::span<const TokenId> source, std::size_t beam_size,
                                     double length_penalty, std::size_t max_len) const {
  return beam_search(scorer(source), target_.eos(), beam_size, length_penalty,
                     std::min(max_len, max_generation_length()));
}

}  // namespace berttune
