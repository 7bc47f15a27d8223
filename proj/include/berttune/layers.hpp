#pragma once

// Transformer building blocks shared by the frozen language model and the
// translation model.

#include <functional>
#include <string>

#include "berttune/autodiff.hpp"
#include "berttune/rng.hpp"

namespace berttune::nn {

using ParamVisitor = std::function<void(const std::string& name, ad::Tensor& tensor)>;

struct Linear {
  ad::Tensor weight;  // in x out
  ad::Tensor bias;    // 1 x out
};

struct LayerNorm {
  ad::Tensor gain;  // 1 x width
  ad::Tensor bias;  // 1 x width
};

struct Attention {
  Linear query, key, value, output;
  std::size_t heads = 1;
};

struct FeedForward {
  Linear expand, contract;
};

/// Norm placement: pre-norm wraps the residual branch input, post-norm
/// normalises the residual sum.
enum class NormPlacement { pre, post };

struct EncoderLayer {
  Attention self_attention;
  LayerNorm attention_norm;
  FeedForward ffn;
  LayerNorm ffn_norm;
};

struct DecoderLayer {
  Attention self_attention;
  LayerNorm self_norm;
  Attention cross_attention;
  LayerNorm cross_norm;
  FeedForward ffn;
  LayerNorm ffn_norm;
};

/// Weights uniform in +-1/sqrt(in), zero biases.
Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool trainable);
LayerNorm make_layer_norm(std::size_t width, bool trainable);
Attention make_attention(std::size_t width, std::size_t heads, Rng& rng, bool trainable);
FeedForward make_feed_forward(std::size_t width, std::size_t hidden, Rng& rng, bool trainable);
EncoderLayer make_encoder_layer(std::size_t width, std::size_t heads, std::size_t hidden,
                                Rng& rng, bool trainable);
DecoderLayer make_decoder_layer(std::size_t width, std::size_t heads, std::size_t hidden,
                                Rng& rng, bool trainable);

ad::Tensor linear(ad::Graph& g, const Linear& layer, const ad::Tensor& x);
ad::Tensor layer_norm(ad::Graph& g, const LayerNorm& norm, const ad::Tensor& x);
/// Multi-head scaled dot-product attention of `queries` over `keys` (which
/// also provide the values). With `causal`, query i sees keys 0..i only.
ad::Tensor attention(ad::Graph& g, const Attention& attn, const ad::Tensor& queries,
                     const ad::Tensor& keys, bool causal);
ad::Tensor feed_forward(ad::Graph& g, const FeedForward& ffn, const ad::Tensor& x);

ad::Tensor encoder_layer(ad::Graph& g, const EncoderLayer& layer, const ad::Tensor& x,
                         NormPlacement placement);
ad::Tensor decoder_layer(ad::Graph& g, const DecoderLayer& layer, const ad::Tensor& x,
                         const ad::Tensor& memory);

/// Standard sin/cos position table, max_len x width.
ad::Tensor sinusoidal_positions(std::size_t max_len, std::size_t width);

void visit(Linear& l, const std::string& prefix, const ParamVisitor& f);
void visit(LayerNorm& n, const std::string& prefix, const ParamVisitor& f);
void visit(Attention& a, const std::string& prefix, const ParamVisitor& f);
void visit(FeedForward& f, const std::string& prefix, const ParamVisitor& v);
void visit(EncoderLayer& l, const std::string& prefix, const ParamVisitor& f);
void visit(DecoderLayer& l, const std::string& prefix, const ParamVisitor& f);

}  // namespace berttune::nn
