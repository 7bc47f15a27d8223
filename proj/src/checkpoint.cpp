#include "berttune/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

#include <json.hpp>

#include "berttune/lm_encoder.hpp"
#include "berttune/sha256.hpp"

namespace berttune {

using nlohmann::json;

namespace {

std::vector<double> rounded_copy(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  round_to_float32(out);
  return out;
}

std::vector<std::uint8_t> serialise_blob(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> blob;
  for (const auto& p : ckpt.parameters) append_float32(blob, p.values);
  for (const auto& m : ckpt.optimizer.first) append_float32(blob, m);
  for (const auto& v : ckpt.optimizer.second) append_float32(blob, v);
  return blob;
}

json vocab_json(const Vocabulary& v) {
  const auto& s = v.sentinels();
  return {{"tokens", v.tokens()},
          {"sentinels", {{"bos", s.bos}, {"eos", s.eos}, {"pad", s.pad}, {"unk", s.unk}}}};
}

Vocabulary vocab_from_json(const json& j) {
  const auto& s = j.at("sentinels");
  return Vocabulary(j.at("tokens").get<std::vector<std::string>>(),
                    SentinelIds{s.at("bos").get<TokenId>(), s.at("pad").get<TokenId>(),
                                s.at("eos").get<TokenId>(), s.at("unk").get<TokenId>()});
}

}  // namespace

void round_optimizer(OptimizerState& state) {
  for (auto& m : state.first) round_to_float32(m);
  for (auto& v : state.second) round_to_float32(v);
}

std::string Checkpoint::blob_digest() const { return sha256_hex(serialise_blob(*this)); }

Checkpoint capture(const Seq2SeqModel& model, const OptimizerState& optimizer) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.source_vocab = model.source_vocab();
  ckpt.target_vocab = model.target_vocab();
  for (const auto& p : model.parameters()) {
    ckpt.parameters.push_back({p.name, p.tensor.shape(), rounded_copy(p.tensor.values())});
  }
  ckpt.optimizer = optimizer;
  round_optimizer(ckpt.optimizer);
  return ckpt;
}

void load_parameters(Seq2SeqModel& model, const Checkpoint& ckpt) {
  auto& params = model.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(ckpt.parameters.size()) +
                             " tensors, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& stored = ckpt.parameters[i];
    if (stored.name != params[i].name || stored.shape != params[i].tensor.shape()) {
      throw std::runtime_error("checkpoint tensor '" + stored.name + "' does not match model tensor '" +
                               params[i].name + "'");
    }
    auto dst = params[i].tensor.mutable_values();
    std::copy(stored.values.begin(), stored.values.end(), dst.begin());
  }
}

Seq2SeqModel restore_model(const Checkpoint& ckpt) {
  Seq2SeqModel model(ckpt.config, ckpt.source_vocab, ckpt.target_vocab, 0);
  load_parameters(model, ckpt);
  return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto blob = serialise_blob(ckpt);

  json tensors = json::array();
  for (const auto& p : ckpt.parameters)
    tensors.push_back({{"name", p.name}, {"shape", {p.shape.rows, p.shape.cols}}, {"kind", "parameter"}});
  for (std::size_t i = 0; i < ckpt.optimizer.first.size(); ++i)
    tensors.push_back({{"name", ckpt.parameters[i].name}, {"size", ckpt.optimizer.first[i].size()},
                       {"kind", "adam_first_moment"}});
  for (std::size_t i = 0; i < ckpt.optimizer.second.size(); ++i)
    tensors.push_back({{"name", ckpt.parameters[i].name}, {"size", ckpt.optimizer.second[i].size()},
                       {"kind", "adam_second_moment"}});

  json history = json::array();
  for (const auto& h : ckpt.history) {
    history.push_back({{"epoch", h.epoch},
                       {"step", h.step},
                       {"train_loss", h.train_loss},
                       {"valid_bleu", h.valid_bleu},
                       {"valid_fbert", h.valid_fbert}});
  }
  const auto& c = ckpt.config;
  json manifest = {
      {"schema_version", Checkpoint::kSchemaVersion},
      {"config",
       {{"encoder_layers", c.encoder_layers},
        {"decoder_layers", c.decoder_layers},
        {"width", c.width},
        {"heads", c.heads},
        {"ffn_dim", c.ffn_dim},
        {"max_length", c.max_length}}},
      {"source_vocabulary", vocab_json(ckpt.source_vocab)},
      {"target_vocabulary", vocab_json(ckpt.target_vocab)},
      {"phase", ckpt.phase},
      {"seed", ckpt.seed},
      {"step", ckpt.step},
      {"epoch", ckpt.epoch},
      {"optimizer_step", ckpt.optimizer.step},
      {"metric_history", history},
      {"tensors", tensors},
      {"blob", "ckpt.bin"},
      {"sha256", sha256_hex(blob)},
  };
  {
    std::ofstream out(dir / "ckpt.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("cannot write " + (dir / "ckpt.bin").string());
  }
  std::ofstream out(dir / "ckpt.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + (dir / "ckpt.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto mpath = std::filesystem::is_directory(path) ? path / "ckpt.json" : path;
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("cannot open checkpoint " + mpath.string());
  Checkpoint ckpt;
  std::vector<std::uint8_t> blob;
  json m;
  try {
    in >> m;
    if (m.at("schema_version").get<int>() != Checkpoint::kSchemaVersion) {
      throw std::runtime_error("unsupported checkpoint schema_version");
    }
    const auto& c = m.at("config");
    ckpt.config.encoder_layers = c.at("encoder_layers").get<std::size_t>();
    ckpt.config.decoder_layers = c.at("decoder_layers").get<std::size_t>();
    ckpt.config.width = c.at("width").get<std::size_t>();
    ckpt.config.heads = c.at("heads").get<std::size_t>();
    ckpt.config.ffn_dim = c.at("ffn_dim").get<std::size_t>();
    ckpt.config.max_length = c.at("max_length").get<std::size_t>();
    ckpt.source_vocab = vocab_from_json(m.at("source_vocabulary"));
    ckpt.target_vocab = vocab_from_json(m.at("target_vocabulary"));
    ckpt.phase = m.at("phase").get<std::string>();
    ckpt.seed = m.at("seed").get<std::uint64_t>();
    ckpt.step = m.at("step").get<std::size_t>();
    ckpt.epoch = m.at("epoch").get<std::size_t>();
    ckpt.optimizer.step = m.at("optimizer_step").get<std::size_t>();
    for (const auto& h : m.at("metric_history")) {
      ckpt.history.push_back({h.at("epoch").get<std::size_t>(), h.at("step").get<std::size_t>(),
                              h.at("train_loss").get<double>(), h.at("valid_bleu").get<double>(),
                              h.at("valid_fbert").get<double>()});
    }

    const auto blob_path = mpath.parent_path() / m.value("blob", std::string("ckpt.bin"));
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + blob_path.string());
    blob.assign(std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>());
    if (sha256_hex(blob) != m.at("sha256").get<std::string>()) {
      throw std::runtime_error("checkpoint checksum mismatch for " + blob_path.string());
    }

    const auto values = unpack_float32(blob);
    std::size_t offset = 0;
    auto take = [&](std::size_t n) {
      if (offset + n > values.size()) throw std::runtime_error("checkpoint blob too short");
      std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(offset),
                            values.begin() + static_cast<std::ptrdiff_t>(offset + n));
      offset += n;
      return v;
    };
    for (const auto& t : m.at("tensors")) {
      const auto kind = t.at("kind").get<std::string>();
      if (kind == "parameter") {
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        const ad::Shape s{shape.at(0), shape.at(1)};
        ckpt.parameters.push_back({t.at("name").get<std::string>(), s, take(s.size())});
      } else if (kind == "adam_first_moment") {
        ckpt.optimizer.first.push_back(take(t.at("size").get<std::size_t>()));
      } else if (kind == "adam_second_moment") {
        ckpt.optimizer.second.push_back(take(t.at("size").get<std::size_t>()));
      } else {
        throw std::runtime_error("unknown tensor kind '" + kind + "'");
      }
    }
    if (offset != values.size() || blob.size() % 4 != 0) {
      throw std::runtime_error("checkpoint blob size does not match the manifest");
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(mpath.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace berttune
