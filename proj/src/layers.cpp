#include "berttune/layers.hpp"

#include <cmath>
#include <vector>

namespace berttune::nn {

namespace {

ad::Tensor uniform(std::size_t rows, std::size_t cols, double bound, Rng& rng, bool trainable) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return ad::Tensor({rows, cols}, std::move(v), trainable);
}

ad::Tensor filled(std::size_t cols, double value, bool trainable) {
  return ad::Tensor({1, cols}, std::vector<double>(cols, value), trainable);
}

}  // namespace

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool trainable) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Linear{uniform(in, out, bound, rng, trainable), filled(out, 0.0, trainable)};
}

LayerNorm make_layer_norm(std::size_t width, bool trainable) {
  return LayerNorm{filled(width, 1.0, trainable), filled(width, 0.0, trainable)};
}

Attention make_attention(std::size_t width, std::size_t heads, Rng& rng, bool trainable) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(width) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  Attention a;
  a.query = make_linear(width, width, rng, trainable);
  a.key = make_linear(width, width, rng, trainable);
  a.value = make_linear(width, width, rng, trainable);
  a.output = make_linear(width, width, rng, trainable);
  a.heads = heads;
  return a;
}

FeedForward make_feed_forward(std::size_t width, std::size_t hidden, Rng& rng, bool trainable) {
  return FeedForward{make_linear(width, hidden, rng, trainable),
                     make_linear(hidden, width, rng, trainable)};
}

EncoderLayer make_encoder_layer(std::size_t width, std::size_t heads, std::size_t hidden,
                                Rng& rng, bool trainable) {
  EncoderLayer l;
  l.self_attention = make_attention(width, heads, rng, trainable);
  l.attention_norm = make_layer_norm(width, trainable);
  l.ffn = make_feed_forward(width, hidden, rng, trainable);
  l.ffn_norm = make_layer_norm(width, trainable);
  return l;
}

DecoderLayer make_decoder_layer(std::size_t width, std::size_t heads, std::size_t hidden,
                                Rng& rng, bool trainable) {
  DecoderLayer l;
  l.self_attention = make_attention(width, heads, rng, trainable);
  l.self_norm = make_layer_norm(width, trainable);
  l.cross_attention = make_attention(width, heads, rng, trainable);
  l.cross_norm = make_layer_norm(width, trainable);
  l.ffn = make_feed_forward(width, hidden, rng, trainable);
  l.ffn_norm = make_layer_norm(width, trainable);
  return l;
}

// ---------------------------------------------------------------------------

ad::Tensor linear(ad::Graph& g, const Linear& layer, const ad::Tensor& x) {
  return ad::add_row(g, ad::matmul(g, x, layer.weight), layer.bias);
}

ad::Tensor layer_norm(ad::Graph& g, const LayerNorm& norm, const ad::Tensor& x) {
  return ad::layer_norm_rows(g, x, norm.gain, norm.bias);
}

ad::Tensor attention(ad::Graph& g, const Attention& attn, const ad::Tensor& queries,
                     const ad::Tensor& keys, bool causal) {
  const std::size_t width = queries.cols();
  const std::size_t head_width = width / attn.heads;
  const std::size_t m = queries.rows(), n = keys.rows();
  ad::Tensor q = linear(g, attn.query, queries);
  ad::Tensor k = linear(g, attn.key, keys);
  ad::Tensor v = linear(g, attn.value, keys);

  ad::Tensor mask;
  if (causal) {
    std::vector<double> mv(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < n; ++j) mv[i * n + j] = -1e9;
    mask = ad::Tensor({m, n}, std::move(mv));
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_width));
  std::vector<ad::Tensor> heads;
  heads.reserve(attn.heads);
  for (std::size_t h = 0; h < attn.heads; ++h) {
    ad::Tensor qh = ad::slice_cols(g, q, h * head_width, head_width);
    ad::Tensor kh = ad::slice_cols(g, k, h * head_width, head_width);
    ad::Tensor vh = ad::slice_cols(g, v, h * head_width, head_width);
    ad::Tensor scores = ad::scale(g, ad::matmul_nt(g, qh, kh), inv_sqrt);
    if (causal) scores = ad::add(g, scores, mask);
    heads.push_back(ad::matmul(g, ad::softmax_rows(g, scores), vh));
  }
  ad::Tensor merged = attn.heads == 1 ? heads.front() : ad::concat_cols(g, heads);
  return linear(g, attn.output, merged);
}

ad::Tensor feed_forward(ad::Graph& g, const FeedForward& ffn, const ad::Tensor& x) {
  return linear(g, ffn.contract, ad::gelu(g, linear(g, ffn.expand, x)));
}

ad::Tensor encoder_layer(ad::Graph& g, const EncoderLayer& layer, const ad::Tensor& x,
                         NormPlacement placement) {
  if (placement == NormPlacement::pre) {
    ad::Tensor h = layer_norm(g, layer.attention_norm, x);
    ad::Tensor y = ad::add(g, x, attention(g, layer.self_attention, h, h, false));
    return ad::add(g, y, feed_forward(g, layer.ffn, layer_norm(g, layer.ffn_norm, y)));
  }
  ad::Tensor y = layer_norm(g, layer.attention_norm,
                            ad::add(g, x, attention(g, layer.self_attention, x, x, false)));
  return layer_norm(g, layer.ffn_norm, ad::add(g, y, feed_forward(g, layer.ffn, y)));
}

ad::Tensor decoder_layer(ad::Graph& g, const DecoderLayer& layer, const ad::Tensor& x,
                         const ad::Tensor& memory) {
  ad::Tensor h = layer_norm(g, layer.self_norm, x);
  ad::Tensor y = ad::add(g, x, attention(g, layer.self_attention, h, h, true));
  ad::Tensor c = layer_norm(g, layer.cross_norm, y);
  y = ad::add(g, y, attention(g, layer.cross_attention, c, memory, false));
  return ad::add(g, y, feed_forward(g, layer.ffn, layer_norm(g, layer.ffn_norm, y)));
}

ad::Tensor sinusoidal_positions(std::size_t max_len, std::size_t width) {
  std::vector<double> v(max_len * width);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * freq;
      v[pos * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return ad::Tensor({max_len, width}, std::move(v));
}

// ---------------------------------------------------------------------------

void visit(Linear& l, const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".weight", l.weight);
  f(prefix + ".bias", l.bias);
}

void visit(LayerNorm& n, const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".gain", n.gain);
  f(prefix + ".bias", n.bias);
}

void visit(Attention& a, const std::string& prefix, const ParamVisitor& f) {
  visit(a.query, prefix + ".query", f);
  visit(a.key, prefix + ".key", f);
  visit(a.value, prefix + ".value", f);
  visit(a.output, prefix + ".output", f);
}

void visit(FeedForward& ffn, const std::string& prefix, const ParamVisitor& f) {
  visit(ffn.expand, prefix + ".expand", f);
  visit(ffn.contract, prefix + ".contract", f);
}

void visit(EncoderLayer& l, const std::string& prefix, const ParamVisitor& f) {
  visit(l.self_attention, prefix + ".self_attention", f);
  visit(l.attention_norm, prefix + ".attention_norm", f);
  visit(l.ffn, prefix + ".ffn", f);
  visit(l.ffn_norm, prefix + ".ffn_norm", f);
}

void visit(DecoderLayer& l, const std::string& prefix, const ParamVisitor& f) {
  visit(l.self_attention, prefix + ".self_attention", f);
  visit(l.self_norm, prefix + ".self_norm", f);
  visit(l.cross_attention, prefix + ".cross_attention", f);
  visit(l.cross_norm, prefix + ".cross_norm", f);
  visit(l.ffn, prefix + ".ffn", f);
  visit(l.ffn_norm, prefix + ".ffn_norm", f);
}

}  // namespace berttune::nn
