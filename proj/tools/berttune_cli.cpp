// berttune: synthetic data, baseline training, BERTScore fine-tuning and
// evaluation from the command line.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "berttune/bertscore.hpp"
#include "berttune/checkpoint.hpp"
#include "berttune/corpus.hpp"
#include "berttune/evaluation.hpp"
#include "berttune/lm_encoder.hpp"
#include "berttune/synthetic.hpp"
#include "berttune/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace berttune;

namespace {

struct ModelFlags {
  ModelConfig config;
  void add(CLI::App* app) {
    app->add_option("--encoder-layers", config.encoder_layers);
    app->add_option("--decoder-layers", config.decoder_layers);
    app->add_option("--width", config.width);
    app->add_option("--heads", config.heads);
    app->add_option("--ffn-dim", config.ffn_dim);
    app->add_option("--max-length", config.max_length, "Longest sequence incl. bos/eos");
  }
};

void add_train_flags(CLI::App* app, TrainConfig& c) {
  app->add_option("--batch-size", c.batch_size);
  app->add_option("--lr", c.learning_rate, "Peak learning rate");
  app->add_option("--beta1", c.beta1);
  app->add_option("--beta2", c.beta2);
  app->add_option("--warmup-steps", c.warmup_steps);
  app->add_option("--patience", c.patience);
  app->add_option("--max-epochs", c.max_epochs);
  app->add_option("--max-steps", c.max_steps, "0 = unlimited");
  app->add_option("--eval-every", c.eval_every, "Extra validation every N steps; 0 = epoch ends only");
  app->add_option("--valid-limit", c.valid_limit, "Validate on the first N pairs; 0 = all");
  app->add_option("--seed", c.seed);
}

void write_json(const json& j, const std::optional<fs::path>& path) {
  if (!path) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (path->has_parent_path()) fs::create_directories(path->parent_path());
  std::ofstream out(*path);
  if (!out) throw std::runtime_error("cannot write " + path->string());
  out << j.dump(2) << '\n';
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::function<void(const std::string&)> stderr_log(bool quiet) {
  if (quiet) return {};
  return [](const std::string& s) { std::cerr << s << '\n'; };
}

/// Flags from a flat JSON config are appended to the command line unless the
/// same flag was given explicitly.
std::vector<std::string> merge_config(CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  CLI::App* sub = nullptr;
  std::size_t first = 0;
  for (; first < args.size() && !sub; ++first) {
    for (CLI::App* s : app.get_subcommands({})) {
      if (s->get_name() == args[first]) sub = s;
    }
  }
  if (!sub) return args;

  std::optional<std::string> config_path;
  for (std::size_t i = first; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (!config_path) return args;

  std::ifstream in(*config_path);
  if (!in) throw std::runtime_error("cannot open config " + *config_path);
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config " + *config_path + ": " + e.what());
  }
  if (!cfg.is_object()) throw std::runtime_error("config " + *config_path + ": expected an object");

  auto given = [&](const std::string& flag) {
    for (std::size_t i = first; i < args.size(); ++i) {
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  for (const auto& [key, value] : cfg.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    const std::string flag = "--" + name;
    if (name == "config") continue;
    if (!sub->get_option_no_throw(flag)) {
      std::cerr << "config: ignoring '" << key << "' (not an option of " << sub->get_name()
                << ")\n";
      continue;
    }
    if (given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_string()) {
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      args.push_back(flag);
      args.push_back(value.dump());
    } else {
      throw std::runtime_error("config key '" + key + "' must be a string, number or boolean");
    }
  }
  return args;
}

fs::path default_lm(const fs::path& data) { return data / "lm"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BERTScore fine-tuning for small translation models"};
  app.require_subcommand(1);
  bool quiet = false;
  std::string config_file;
  app.add_flag("-q,--quiet", quiet, "No progress output on stderr");

  // make-data
  SyntheticSpec spec;
  std::string lm_mode = "identity";
  fs::path data_out;
  auto* make_data = app.add_subcommand("make-data", "Generate the synonym-cluster task");
  make_data->add_option("--clusters", spec.clusters);
  make_data->add_option("--synonyms", spec.synonyms);
  make_data->add_option("--train-size", spec.train_size);
  make_data->add_option("--valid-size", spec.valid_size);
  make_data->add_option("--test-size", spec.test_size);
  make_data->add_option("--dim", spec.dim);
  make_data->add_option("--seed", spec.seed);
  make_data->add_option("--min-length", spec.min_length);
  make_data->add_option("--max-length", spec.max_length);
  make_data->add_option("--vocab-size", spec.vocab_size, "0 = clusters*synonyms + 4");
  make_data->add_option("--lm-mode", lm_mode)->check(CLI::IsMember({"identity", "transformer"}));
  make_data->add_option("--out-dir", data_out)->required();
  make_data->add_option("--config", config_file, "Flat JSON file of option defaults");

  // train-baseline
  ModelFlags model_flags;
  TrainConfig base_cfg = TrainConfig::baseline_defaults();
  fs::path base_data, base_out;
  std::optional<fs::path> base_lm, base_resume;
  auto* train = app.add_subcommand("train-baseline", "Label-smoothed NLL training");
  train->add_option("--data", base_data, "Corpus directory")->required();
  train->add_option("--out", base_out)->required();
  train->add_option("--lm", base_lm, "Language model (default <data>/lm if present)");
  train->add_option("--resume", base_resume, "Epoch checkpoint to continue from");
  train->add_option("--label-smoothing", base_cfg.label_smoothing);
  model_flags.add(train);
  add_train_flags(train, base_cfg);
  train->add_option("--config", config_file, "Flat JSON file of option defaults");

  // finetune
  TrainConfig ft_cfg = TrainConfig::finetune_defaults();
  fs::path ft_from, ft_out;
  std::optional<fs::path> ft_data, ft_lm;
  std::string ft_mode;
  auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint with -F_BERT");
  ft->add_option("--from", ft_from, "Starting checkpoint")->required();
  ft->add_option("--mode", ft_mode, "dense | sparsemax | gumbel")->required();
  ft->add_option("--tau", ft_cfg.mode.tau, "Gumbel-Softmax temperature");
  ft->add_option("--out", ft_out)->required();
  ft->add_option("--data", ft_data, "Corpus directory");
  ft->add_option("--lm", ft_lm, "Language model (default <data>/lm)");
  add_train_flags(ft, ft_cfg);
  ft->add_option("--config", config_file, "Flat JSON file of option defaults");

  // evaluate
  fs::path ev_ckpt, ev_lm, ev_data;
  std::size_t ev_beam = 5;
  double ev_alpha = 1.0;
  std::string ev_split = "test";
  std::optional<fs::path> ev_out;
  auto* ev = app.add_subcommand("evaluate", "Beam-search BLEU and F_BERT on a split");
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--lm", ev_lm)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--beam", ev_beam)->capture_default_str();
  ev->add_option("--length-penalty", ev_alpha)->capture_default_str();
  ev->add_option("--split", ev_split)->capture_default_str();
  ev->add_option("--out", ev_out, "JSON report path (default stdout)");
  ev->add_option("--config", config_file, "Flat JSON file of option defaults");

  // score
  fs::path sc_lm, sc_cand, sc_ref;
  std::optional<fs::path> sc_out;
  auto* sc = app.add_subcommand("score", "Hard BERTScore of two aligned text files");
  sc->add_option("--lm", sc_lm)->required();
  sc->add_option("--candidates", sc_cand)->required();
  sc->add_option("--references", sc_ref)->required();
  sc->add_option("--out", sc_out, "Per-line CSV path");
  sc->add_option("--config", config_file, "Flat JSON file of option defaults");

  // entropy-report
  fs::path en_ckpt, en_data, en_out = "entropy.csv";
  std::size_t en_bins = 20;
  std::string en_split = "test";
  auto* en = app.add_subcommand("entropy-report", "Entropy histogram of greedy decoding");
  en->add_option("--ckpt", en_ckpt)->required();
  en->add_option("--data", en_data)->required();
  en->add_option("--bins", en_bins)->capture_default_str();
  en->add_option("--split", en_split)->capture_default_str();
  en->add_option("--out", en_out, "Histogram CSV")->capture_default_str();
  en->add_option("--config", config_file, "Flat JSON file of option defaults");

  // export-curves
  fs::path cu_metrics;
  std::optional<fs::path> cu_out;
  auto* cu = app.add_subcommand("export-curves", "Plot-ready series from metrics.csv");
  cu->add_option("--metrics", cu_metrics)->required();
  cu->add_option("--out", cu_out, "JSON path (default stdout)");
  cu->add_option("--config", config_file, "Flat JSON file of option defaults");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*make_data) {
      spec.lm_mode = lm_mode == "identity" ? LmMode::identity : LmMode::transformer;
      const SyntheticTask task = make_synthetic_corpus(spec);
      write_synthetic_task(task, data_out);
      write_json({{"out_dir", data_out.string()},
                  {"vocab_size", task.lm.vocab_size()},
                  {"dim", task.lm.dim()},
                  {"train", task.corpus.train.size()},
                  {"valid", task.corpus.valid.size()},
                  {"test", task.corpus.test.size()},
                  {"min_within_cosine", task.geometry.min_within_cosine},
                  {"max_cross_cosine", task.geometry.max_cross_cosine}},
                 std::nullopt);
    } else if (*train) {
      const ParallelCorpus corpus = load_corpus(base_data);
      std::optional<LmEncoder> lm;
      if (base_lm) {
        lm = load_lm(*base_lm);
      } else if (fs::exists(default_lm(base_data) / "model.json")) {
        lm = load_lm(default_lm(base_data));
      }
      std::optional<Checkpoint> resume;
      if (base_resume) resume = load_checkpoint(*base_resume);
      const Vocabulary source = resume ? resume->source_vocab
                                       : build_source_vocabulary(corpus.train);
      const Vocabulary target = resume ? resume->target_vocab
                                : lm   ? lm->vocabulary()
                                       : build_target_vocabulary(corpus.train);
      const ModelConfig mc = resume ? resume->config : model_flags.config;
      TrainingData data{encode_pairs(corpus.train, source, target),
                        encode_pairs(corpus.valid, source, target)};
      TrainOptions options;
      options.out_dir = base_out;
      options.log = stderr_log(quiet);
      if (resume) options.resume = &*resume;
      const TrainResult r =
          train_baseline(data, source, target, mc, base_cfg, lm ? &*lm : nullptr, options);
      write_json({{"out", base_out.string()},
                  {"epochs", r.epochs_run},
                  {"best_epoch", r.best.epoch},
                  {"best_step", r.best.step},
                  {"parameters", restore_model(r.best).parameter_count()}},
                 std::nullopt);
    } else if (*ft) {
      if (!ft_data) throw std::invalid_argument("finetune needs --data (or \"data\" in --config)");
      ft_cfg.mode.variant = softpred::parse_variant(ft_mode);
      const Checkpoint start = load_checkpoint(ft_from);
      const LmEncoder lm = load_lm(ft_lm ? *ft_lm : default_lm(*ft_data));
      const ParallelCorpus corpus = load_corpus(*ft_data);
      TrainingData data{encode_pairs(corpus.train, start.source_vocab, start.target_vocab),
                        encode_pairs(corpus.valid, start.source_vocab, start.target_vocab)};
      TrainOptions options;
      options.out_dir = ft_out;
      options.log = stderr_log(quiet);
      const std::string digest = lm.parameter_digest();
      const TrainResult r = finetune(start, data, lm, ft_cfg, options);
      if (lm.parameter_digest() != digest) throw std::logic_error("language model was modified");
      write_json({{"out", ft_out.string()},
                  {"mode", softpred::to_string(ft_cfg.mode.variant)},
                  {"epochs", r.epochs_run},
                  {"best_epoch", r.best.epoch},
                  {"best_step", r.best.step},
                  {"lm_sha256", digest}},
                 std::nullopt);
    } else if (*ev) {
      const Checkpoint ckpt = load_checkpoint(ev_ckpt);
      const LmEncoder lm = load_lm(ev_lm);
      const auto pairs = load_split(ev_data, ev_split);
      const EvalReport report = evaluate(ckpt, lm, pairs, ev_beam, ev_alpha);
      write_json(report.to_json(), ev_out);
    } else if (*sc) {
      const LmEncoder lm = load_lm(sc_lm);
      const auto cands = read_lines(sc_cand);
      const auto refs = read_lines(sc_ref);
      if (cands.size() != refs.size()) {
        throw std::invalid_argument("score: " + std::to_string(cands.size()) + " candidates for " +
                                    std::to_string(refs.size()) + " references");
      }
      std::optional<std::ofstream> csv;
      if (sc_out) {
        csv.emplace(*sc_out);
        if (!*csv) throw std::runtime_error("cannot write " + sc_out->string());
        csv->precision(17);
        *csv << "line,precision,recall,f\n";
      }
      const Vocabulary& v = lm.vocabulary();
      double p = 0, r = 0, f = 0;
      for (std::size_t i = 0; i < cands.size(); ++i) {
        const ScoreTriple s =
            score_hard(v.encode(tokenize(cands[i])), v.encode(tokenize(refs[i])), lm);
        p += s.precision;
        r += s.recall;
        f += s.f;
        if (csv) *csv << i + 1 << ',' << s.precision << ',' << s.recall << ',' << s.f << '\n';
      }
      const double n = cands.empty() ? 1.0 : static_cast<double>(cands.size());
      write_json({{"sentences", cands.size()},
                  {"precision", p / n},
                  {"recall", r / n},
                  {"fbert", f / n}},
                 std::nullopt);
    } else if (*en) {
      const Checkpoint ckpt = load_checkpoint(en_ckpt);
      const Seq2SeqModel model = restore_model(ckpt);
      const auto pairs = encode_pairs(load_split(en_data, en_split), model.source_vocab(),
                                      model.target_vocab());
      const EntropyReport report = entropy_report(model, pairs, en_bins);
      write_entropy_csv(report, en_out);
      json j = report.to_json();
      j["csv"] = en_out.string();
      write_json(j, std::nullopt);
    } else if (*cu) {
      write_json(export_curves(cu_metrics).to_json(), cu_out);
    }
  } catch (const MetricsFormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
