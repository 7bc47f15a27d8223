#include "berttune/lm_encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>

#include <json.hpp>

#include "berttune/sha256.hpp"

namespace berttune {

using nlohmann::json;

// ---------------------------------------------------------------------------
// float32 blobs

void round_to_float32(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void append_float32(std::vector<std::uint8_t>& blob, std::span<const double> values) {
  const std::size_t offset = blob.size();
  blob.resize(offset + 4 * values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) {
      blob[offset + 4 * i + static_cast<std::size_t>(b)] =
          static_cast<std::uint8_t>((bits >> (8 * b)) & 0xffu);
    }
  }
}

std::vector<std::uint8_t> pack_float32(std::span<const double> values) {
  std::vector<std::uint8_t> blob;
  append_float32(blob, values);
  return blob;
}

std::vector<double> unpack_float32(std::span<const std::uint8_t> bytes) {
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(bytes[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
    }
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

std::string to_string(LmMode mode) {
  return mode == LmMode::identity ? "identity" : "transformer";
}

// ---------------------------------------------------------------------------

namespace {

EmbeddingTable rounded(const EmbeddingTable& table) {
  std::vector<double> v(table.matrix().values().begin(), table.matrix().values().end());
  round_to_float32(v);
  return EmbeddingTable(table.vocab_size(), table.dim(), std::move(v));
}

void round_tensor(ad::Tensor& t) {
  if (t.defined()) round_to_float32(t.mutable_values());
}

}  // namespace

LmEncoder::LmEncoder(Vocabulary vocab, EmbeddingTable table, LmConfig config,
                     ad::Tensor positions, std::vector<nn::EncoderLayer> layers)
    : vocab_(std::move(vocab)),
      table_(rounded(table)),
      config_(config),
      positions_(std::move(positions)),
      layers_(std::move(layers)) {
  if (table_.vocab_size() != vocab_.size()) {
    throw std::invalid_argument("lm encoder: embedding table has " +
                                std::to_string(table_.vocab_size()) + " rows for a vocabulary of " +
                                std::to_string(vocab_.size()));
  }
  if (config_.mode == LmMode::identity) {
    config_.layers = 0;
    layers_.clear();
    positions_ = ad::Tensor();
  } else {
    if (table_.dim() % config_.heads != 0) {
      throw std::invalid_argument("lm encoder: width not divisible by head count");
    }
    if (layers_.size() != config_.layers) {
      throw std::invalid_argument("lm encoder: layer count mismatch");
    }
    round_tensor(positions_);
    for (auto& layer : layers_) {
      nn::visit(layer, "", [](const std::string&, ad::Tensor& t) {
        t.set_requires_grad(false);
        round_tensor(t);
      });
    }
  }
}

LmEncoder LmEncoder::identity(Vocabulary vocab, EmbeddingTable table, std::size_t max_length) {
  LmConfig config;
  config.mode = LmMode::identity;
  config.layers = 0;
  config.max_length = max_length;
  return LmEncoder(std::move(vocab), std::move(table), config, ad::Tensor(), {});
}

LmEncoder LmEncoder::random_transformer(Vocabulary vocab, EmbeddingTable table,
                                        const LmConfig& config, std::uint64_t seed) {
  LmConfig c = config;
  c.mode = LmMode::transformer;
  Rng rng(seed);
  std::vector<nn::EncoderLayer> layers;
  for (std::size_t i = 0; i < c.layers; ++i) {
    layers.push_back(nn::make_encoder_layer(table.dim(), c.heads, c.ffn_dim, rng, false));
  }
  ad::Tensor positions = nn::sinusoidal_positions(c.max_length, table.dim());
  return LmEncoder(std::move(vocab), std::move(table), c, std::move(positions),
                   std::move(layers));
}

LmEncoder LmEncoder::transformer(Vocabulary vocab, EmbeddingTable table, LmConfig config,
                                 ad::Tensor positions, std::vector<nn::EncoderLayer> layers) {
  config.mode = LmMode::transformer;
  return LmEncoder(std::move(vocab), std::move(table), config, std::move(positions),
                   std::move(layers));
}

ad::Tensor LmEncoder::embed_tokens(std::span<const TokenId> ids) const {
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
      throw std::out_of_range("embed_tokens: id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab_size()));
    }
  }
  ad::Graph g(false);
  return ad::gather_rows(g, table_.matrix(), ids);
}

ad::Tensor LmEncoder::contextualize(ad::Graph& g, const ad::Tensor& static_seq) const {
  if (static_seq.cols() != dim()) {
    throw ad::ShapeError("contextualize: inputs of width " + std::to_string(static_seq.cols()) +
                         " for an encoder of width " + std::to_string(dim()));
  }
  if (static_seq.rows() > max_length()) {
    throw std::invalid_argument("contextualize: sequence of length " +
                                std::to_string(static_seq.rows()) + " exceeds maximum " +
                                std::to_string(max_length()));
  }
  if (config_.mode == LmMode::identity || static_seq.rows() == 0) return static_seq;

  ad::Tensor x = ad::add(g, static_seq, ad::slice_rows(g, positions_, 0, static_seq.rows()));
  for (const auto& layer : layers_) x = nn::encoder_layer(g, layer, x, nn::NormPlacement::post);
  return x;
}

ad::Tensor LmEncoder::encode_tokens(std::span<const TokenId> ids) const {
  ad::Graph g(false);
  return contextualize(g, embed_tokens(ids));
}

std::vector<std::pair<std::string, ad::Tensor>> LmEncoder::tensors() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  out.emplace_back("embeddings", table_.matrix());
  if (config_.mode == LmMode::transformer) {
    out.emplace_back("positions", positions_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto layer = layers_[i];  // handles share storage
      nn::visit(layer, "layers." + std::to_string(i),
                [&](const std::string& name, ad::Tensor& t) { out.emplace_back(name, t); });
    }
  }
  return out;
}

std::string LmEncoder::parameter_digest() const {
  std::vector<std::uint8_t> bytes;
  for (const auto& [name, t] : tensors()) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.values().data());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& p) {
  return std::filesystem::is_directory(p) ? p / "model.json" : p;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LmLoadError(LmLoadError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ad::Tensor take(const std::vector<double>& all, std::size_t& offset, std::size_t rows,
                std::size_t cols) {
  std::vector<double> v(all.begin() + static_cast<std::ptrdiff_t>(offset),
                        all.begin() + static_cast<std::ptrdiff_t>(offset + rows * cols));
  offset += rows * cols;
  return ad::Tensor({rows, cols}, std::move(v));
}

}  // namespace

void save_lm(const LmEncoder& encoder, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::uint8_t> blob;
  json tensors = json::array();
  for (const auto& [name, t] : encoder.tensors()) {
    append_float32(blob, t.values());
    tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
  }
  const auto& s = encoder.vocabulary().sentinels();
  json manifest = {
      {"schema_version", LmEncoder::kSchemaVersion},
      {"mode", to_string(encoder.mode())},
      {"vocab_size", encoder.vocab_size()},
      {"dim", encoder.dim()},
      {"layers", encoder.config().layers},
      {"heads", encoder.config().heads},
      {"ffn_dim", encoder.config().ffn_dim},
      {"max_length", encoder.max_length()},
      {"vocabulary", encoder.vocabulary().tokens()},
      {"sentinels", {{"bos", s.bos}, {"eos", s.eos}, {"pad", s.pad}, {"unk", s.unk}}},
      {"tensors", tensors},
      {"blob", "model.bin"},
      {"sha256", sha256_hex(blob)},
  };
  {
    std::ofstream out(dir / "model.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("cannot write " + (dir / "model.bin").string());
  }
  std::ofstream out(dir / "model.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + (dir / "model.json").string());
}

LmEncoder load_lm(const std::filesystem::path& path) {
  using Kind = LmLoadError::Kind;
  const auto mpath = manifest_path(path);
  json m;
  {
    std::ifstream in(mpath);
    if (!in) throw LmLoadError(Kind::io, "cannot open " + mpath.string());
    try {
      in >> m;
    } catch (const json::exception& e) {
      throw LmLoadError(Kind::format, mpath.string() + ": " + e.what());
    }
  }

  std::size_t vocab_size = 0, dim = 0;
  LmConfig config;
  std::vector<std::string> tokens;
  SentinelIds sentinels;
  json tensors;
  std::string blob_name, checksum;
  try {
    if (m.at("schema_version").get<int>() != LmEncoder::kSchemaVersion) {
      throw LmLoadError(Kind::format, "unsupported schema_version " + m.at("schema_version").dump());
    }
    const auto mode = m.at("mode").get<std::string>();
    if (mode == "identity") {
      config.mode = LmMode::identity;
    } else if (mode == "transformer") {
      config.mode = LmMode::transformer;
    } else {
      throw LmLoadError(Kind::format, "unknown mode '" + mode + "'");
    }
    vocab_size = m.at("vocab_size").get<std::size_t>();
    dim = m.at("dim").get<std::size_t>();
    config.layers = m.at("layers").get<std::size_t>();
    config.heads = m.value("heads", std::size_t{1});
    config.ffn_dim = m.value("ffn_dim", std::size_t{0});
    config.max_length = m.at("max_length").get<std::size_t>();
    tokens = m.at("vocabulary").get<std::vector<std::string>>();
    const auto& s = m.at("sentinels");
    for (const char* key : {"bos", "eos", "pad", "unk"}) {
      if (!s.contains(key)) throw LmLoadError(Kind::vocabulary, std::string("missing sentinel ") + key);
    }
    sentinels = SentinelIds{s.at("bos").get<TokenId>(), s.at("pad").get<TokenId>(),
                            s.at("eos").get<TokenId>(), s.at("unk").get<TokenId>()};
    tensors = m.at("tensors");
    blob_name = m.value("blob", std::string("model.bin"));
    checksum = m.at("sha256").get<std::string>();
  } catch (const json::exception& e) {
    throw LmLoadError(Kind::format, mpath.string() + ": " + e.what());
  }

  if (tokens.size() != vocab_size) {
    throw LmLoadError(Kind::dimension, "vocabulary lists " + std::to_string(tokens.size()) +
                                           " tokens but vocab_size is " + std::to_string(vocab_size));
  }
  std::optional<Vocabulary> vocab;
  try {
    vocab.emplace(std::move(tokens), sentinels);
  } catch (const std::invalid_argument& e) {
    throw LmLoadError(Kind::vocabulary, e.what());
  }

  const auto blob = read_bytes(mpath.parent_path() / blob_name);
  if (sha256_hex(blob) != checksum) {
    throw LmLoadError(Kind::checksum, "checksum mismatch for " + blob_name);
  }

  // Expected tensor layout for the declared configuration.
  std::vector<std::pair<std::string, ad::Shape>> expected{{"embeddings", {vocab_size, dim}}};
  std::vector<nn::EncoderLayer> layers;
  if (config.mode == LmMode::transformer) {
    if (config.heads == 0 || dim % config.heads != 0 || config.ffn_dim == 0) {
      throw LmLoadError(Kind::dimension, "inconsistent heads/ffn_dim for width " + std::to_string(dim));
    }
    expected.emplace_back("positions", ad::Shape{config.max_length, dim});
    Rng unused(0);
    for (std::size_t i = 0; i < config.layers; ++i) {
      layers.push_back(nn::make_encoder_layer(dim, config.heads, config.ffn_dim, unused, false));
      nn::visit(layers.back(), "layers." + std::to_string(i),
                [&](const std::string& name, ad::Tensor& t) { expected.emplace_back(name, t.shape()); });
    }
  } else if (config.layers != 0) {
    throw LmLoadError(Kind::dimension, "identity mode declares " + std::to_string(config.layers) + " layers");
  }

  if (tensors.size() != expected.size()) {
    throw LmLoadError(Kind::dimension, "manifest lists " + std::to_string(tensors.size()) +
                                           " tensors, expected " + std::to_string(expected.size()));
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto name = tensors[i].at("name").get<std::string>();
    const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
    if (name != expected[i].first || shape.size() != 2 || shape[0] != expected[i].second.rows ||
        shape[1] != expected[i].second.cols) {
      throw LmLoadError(Kind::dimension, "tensor " + std::to_string(i) + " ('" + name +
                                             "') does not match the declared configuration (expected '" +
                                             expected[i].first + "' of " +
                                             ad::to_string(expected[i].second) + ")");
    }
    total += shape[0] * shape[1];
  }
  if (blob.size() != 4 * total) {
    throw LmLoadError(Kind::dimension, "blob holds " + std::to_string(blob.size()) +
                                           " bytes, manifest declares " + std::to_string(4 * total));
  }

  const auto values = unpack_float32(blob);
  for (double v : values) {
    if (!std::isfinite(v)) throw LmLoadError(Kind::format, "non-finite parameter in blob");
  }
  std::size_t offset = 0;
  ad::Tensor embeddings = take(values, offset, vocab_size, dim);
  EmbeddingTable table(vocab_size, dim,
                       std::vector<double>(embeddings.values().begin(), embeddings.values().end()));
  if (config.mode == LmMode::identity) {
    return LmEncoder::identity(std::move(*vocab), std::move(table), config.max_length);
  }
  ad::Tensor positions = take(values, offset, config.max_length, dim);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    nn::visit(layers[i], "", [&](const std::string&, ad::Tensor& t) {
      t = take(values, offset, t.rows(), t.cols());
    });
  }
  return LmEncoder::transformer(std::move(*vocab), std::move(table), config, std::move(positions),
                                std::move(layers));
}

}  // namespace berttune
