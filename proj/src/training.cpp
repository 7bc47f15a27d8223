#include "berttune/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "berttune/bertscore.hpp"
#include "berttune/evaluation.hpp"

namespace berttune {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train config: batch size must be positive");
  if (!(learning_rate > 0.0) || !(epsilon > 0.0)) {
    throw std::invalid_argument("train config: learning rate and epsilon must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train config: Adam betas must lie in [0, 1)");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw std::invalid_argument("train config: label smoothing must lie in [0, 1)");
  }
  if (patience == 0) throw std::invalid_argument("train config: patience must be at least 1");
  mode.validate();
}

TrainConfig TrainConfig::baseline_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.learning_rate = 5e-5;
  c.inverse_sqrt_schedule = false;
  c.max_epochs = 5;
  c.mode = {softpred::PredictionVariant::gumbel_softmax, 0.1};
  return c;
}

// ---------------------------------------------------------------------------
// Losses

ad::Tensor label_smoothed_nll(ad::Graph& g, const ad::Tensor& probs,
                              std::span<const TokenId> targets, double epsilon, TokenId pad) {
  if (targets.size() != probs.rows()) {
    throw std::invalid_argument("label_smoothed_nll: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(probs.rows()) + " rows");
  }
  const std::size_t l = probs.rows(), v = probs.cols();
  std::vector<double> mask(l, 0.0);
  std::size_t count = 0;
  for (std::size_t j = 0; j < l; ++j) {
    if (targets[j] != pad) {
      mask[j] = 1.0;
      ++count;
    }
  }
  if (count == 0) return ad::Tensor::scalar(0.0);

  ad::Tensor logp = ad::log(g, probs, softpred::kProbabilityFloor);
  ad::Tensor gold = ad::pick(g, logp, targets);
  ad::Tensor row_sum = ad::matmul(g, logp, ad::Tensor({v, 1}, std::vector<double>(v, 1.0)));
  ad::Tensor per_row = ad::add(g, ad::scale(g, gold, 1.0 - epsilon),
                               ad::scale(g, row_sum, epsilon / static_cast<double>(v)));
  ad::Tensor masked = ad::mul(g, per_row, ad::Tensor({l, 1}, std::move(mask)));
  return ad::scale(g, ad::sum(g, masked), -1.0 / static_cast<double>(count));
}

ad::Tensor nll_loss(ad::Graph& g, const Seq2SeqModel& model, std::span<const EncodedPair> batch,
                    double epsilon) {
  std::vector<ad::Tensor> probs;
  TokenIds targets;
  for (const auto& pair : batch) {
    probs.push_back(model.teacher_forced_probs(g, pair.source, pair.target));
    targets.insert(targets.end(), pair.target.begin() + 1, pair.target.end());
  }
  return label_smoothed_nll(g, ad::concat_rows(g, probs), targets, epsilon,
                            model.target_vocab().pad());
}

ad::Tensor bertscore_loss(ad::Graph& g, const Seq2SeqModel& model, const LmEncoder& lm,
                          std::span<const EncodedPair> batch,
                          const softpred::PredictionMode& mode, Rng& rng) {
  if (!(model.target_vocab() == lm.vocabulary())) {
    throw std::invalid_argument(
        "bertscore_loss: the model's target vocabulary differs from the language model's");
  }
  if (batch.empty()) throw std::invalid_argument("bertscore_loss: empty batch");
  mode.validate();
  const Vocabulary& vocab = lm.vocabulary();

  std::vector<ad::Tensor> scores;
  for (const auto& pair : batch) {
    ad::Tensor logits = model.teacher_forced_logits(g, pair.source, pair.target);
    // Rows predicting eos or pad are dropped.
    const std::span<const TokenId> predicted(pair.target.data() + 1, pair.target.size() - 1);
    std::vector<ad::Tensor> rows;
    for (std::size_t j = 0; j < predicted.size(); ++j) {
      if (!vocab.is_structural(predicted[j])) rows.push_back(ad::slice_rows(g, logits, j, 1));
    }
    if (rows.empty()) {
      scores.push_back(ad::Tensor::scalar(0.0));
      continue;
    }
    ad::Tensor content = rows.size() == 1 ? rows.front() : ad::concat_rows(g, rows);
    ad::Tensor soft = softpred::soft_predictions(g, content, mode, rng);
    ad::Tensor expected = softpred::expected_embeddings(g, soft, lm.embeddings());
    scores.push_back(score_soft(g, expected, pair.target, lm).f);
  }
  ad::Tensor all = scores.size() == 1 ? scores.front() : ad::concat_rows(g, scores);
  return ad::scale(g, ad::mean(g, all), -1.0);
}

// ---------------------------------------------------------------------------
// Optimiser

double scheduled_learning_rate(const TrainConfig& config, std::size_t step) {
  if (!config.inverse_sqrt_schedule) return config.learning_rate;
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(std::max<std::size_t>(config.warmup_steps, 1));
  if (s < w) return config.learning_rate * s / w;
  return config.learning_rate * std::sqrt(w / s);
}

void adam_step(std::vector<NamedParameter>& params, OptimizerState& state,
               const TrainConfig& config, double learning_rate) {
  for (const auto& p : params) {
    for (double gv : p.tensor.grad()) {
      if (!std::isfinite(gv)) throw NonFiniteGradient(p.name);
    }
  }
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.tensor.size(), 0.0);
      state.second.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.first.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].tensor.mutable_values();
    auto grad = params[k].tensor.grad();
    auto& m = state.first[k];
    auto& v = state.second[k];
    if (m.size() != values.size()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for '" + params[k].name + "'");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = grad.empty() ? 0.0 : grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] -= learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kNoiseStream = 1ULL << 32;

std::string format(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Validator default_validator(const TrainingData& data, const LmEncoder* lm,
                            std::size_t limit) {
  return [&data, lm, limit](const Seq2SeqModel& model) {
    DecodeSettings settings;
    settings.limit = limit;
    const auto m = decode_metrics(model, data.valid, lm, settings);
    return ValidationScores{m.bleu, m.fbert};
  };
}

struct Phase {
  std::string name;
  /// Loss of one batch; `step` is the 1-based optimisation step.
  std::function<ad::Tensor(ad::Graph&, const Seq2SeqModel&, std::span<const EncodedPair>,
                           std::size_t step)>
      loss;
  std::function<double(const ValidationScores&)> selection;
  bool evaluate_start = false;
};

TrainResult run(Seq2SeqModel& model, OptimizerState optimizer, const TrainingData& data,
                const TrainConfig& config, const Phase& phase, const TrainOptions& options,
                const Validator& validator, std::size_t start_epoch, std::size_t start_step,
                std::vector<EpochRecord> history, const Checkpoint* start_best) {
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };
  auto make_checkpoint = [&](std::size_t epoch, std::size_t step) {
    Checkpoint c = capture(model, optimizer);
    c.phase = phase.name;
    c.seed = config.seed;
    c.epoch = epoch;
    c.step = step;
    c.history = history;
    return c;
  };
  // Live state takes the float32-rounded checkpoint values.
  auto sync_to = [&](const Checkpoint& c) {
    load_parameters(model, c);
    optimizer = c.optimizer;
  };

  TrainResult result;
  std::size_t step = start_step;
  std::optional<double> best_metric;
  std::size_t since_best = 0;

  if (start_best) {
    result.best = *start_best;
    for (const auto& h : history) {
      const double metric = phase.selection({h.valid_bleu, h.valid_fbert});
      if (!best_metric || metric > *best_metric) {
        best_metric = metric;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    if (options.out_dir && std::filesystem::exists(*options.out_dir / "best" / "ckpt.json")) {
      result.best = load_checkpoint(*options.out_dir / "best");
    }
  }

  if (phase.evaluate_start) {
    const ValidationScores s = validator(model);
    ++result.validations;
    result.metrics.push_back({step, start_epoch, phase.name, std::nullopt, s.bleu, s.fbert, false});
    history.push_back({start_epoch, step, 0.0, s.bleu, s.fbert});
    result.best = make_checkpoint(start_epoch, step);
    best_metric = phase.selection(s);
    log(format("[%s] step %zu: valid BLEU %.2f F_BERT %.4f (start)", phase.name.c_str(), step,
               s.bleu, s.fbert));
  }
  result.last = start_best ? *start_best : result.best;

  std::vector<std::size_t> order(data.train.size());
  bool stop = (config.max_steps > 0 && step >= config.max_steps) || since_best >= config.patience;
  for (std::size_t epoch = start_epoch + 1; epoch <= config.max_epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream + epoch));
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<EncodedPair> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(data.train[order[i]]);

      ++step;
      model.zero_grad();
      ad::Graph g;
      ad::Tensor loss = phase.loss(g, model, batch, step);
      g.backward(loss);
      adam_step(model.parameters(), optimizer, config, scheduled_learning_rate(config, step));
      loss_total += loss.item();
      ++batches;

      MetricRow row{step, epoch, phase.name, loss.item(), std::nullopt, std::nullopt, false};
      const bool epoch_done = end == order.size();
      if (config.eval_every > 0 && step % config.eval_every == 0 && !epoch_done) {
        const ValidationScores s = validator(model);
        ++result.validations;
        row.valid_bleu = s.bleu;
        row.valid_fbert = s.fbert;
      }
      result.metrics.push_back(row);
      if (config.max_steps > 0 && step >= config.max_steps) {
        stop = true;
        break;
      }
    }
    if (batches == 0) break;

    const double mean_loss = loss_total / static_cast<double>(batches);
    result.epoch_losses.push_back(mean_loss);
    ++result.epochs_run;

    const ValidationScores s = validator(model);
    ++result.validations;
    auto& last_row = result.metrics.back();
    last_row.valid_bleu = s.bleu;
    last_row.valid_fbert = s.fbert;
    last_row.epoch_end = true;
    history.push_back({epoch, step, mean_loss, s.bleu, s.fbert});

    Checkpoint ckpt = make_checkpoint(epoch, step);
    sync_to(ckpt);
    const double metric = phase.selection(s);
    const bool improved = !best_metric || metric > *best_metric;
    log(format("[%s] epoch %zu step %zu: loss %.4f valid BLEU %.2f F_BERT %.4f%s",
               phase.name.c_str(), epoch, step, mean_loss, s.bleu, s.fbert,
               improved ? " *" : ""));
    if (improved) {
      best_metric = metric;
      since_best = 0;
      result.best = ckpt;
    } else {
      ++since_best;
    }
    result.last = ckpt;
    if (options.out_dir) {
      save_checkpoint(result.last, *options.out_dir / "last");
      save_checkpoint(result.best, *options.out_dir / "best");
      write_metrics_csv(result.metrics, *options.out_dir / "metrics.csv");
    }
    if (since_best >= config.patience) break;
  }
  // The best checkpoint's history covers the whole run.
  result.best.history = history;
  result.last.history = history;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    save_checkpoint(result.best, *options.out_dir / "best");
    save_checkpoint(result.last, *options.out_dir / "last");
    write_metrics_csv(result.metrics, *options.out_dir / "metrics.csv");
  }
  return result;
}

}  // namespace

TrainResult train_baseline(const TrainingData& data, const Vocabulary& source_vocab,
                           const Vocabulary& target_vocab, const ModelConfig& model_config,
                           const TrainConfig& config, const LmEncoder* lm,
                           const TrainOptions& options) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("train_baseline: empty training corpus");
  if (data.valid.empty() && !options.validator) {
    throw std::invalid_argument("train_baseline: empty validation corpus");
  }
  if (lm && !(lm->vocabulary() == target_vocab)) {
    throw std::invalid_argument("train_baseline: target vocabulary differs from the LM's");
  }

  Seq2SeqModel model(model_config, source_vocab, target_vocab, config.seed);
  OptimizerState optimizer;
  std::size_t start_epoch = 0, start_step = 0;
  std::vector<EpochRecord> history;
  if (options.resume) {
    load_parameters(model, *options.resume);
    optimizer = options.resume->optimizer;
    start_epoch = options.resume->epoch;
    start_step = options.resume->step;
    history = options.resume->history;
  }

  Phase phase;
  phase.name = "baseline";
  phase.loss = [&config](ad::Graph& g, const Seq2SeqModel& m, std::span<const EncodedPair> batch,
                         std::size_t) { return nll_loss(g, m, batch, config.label_smoothing); };
  phase.selection = [](const ValidationScores& s) { return s.bleu; };

  const Validator validator =
      options.validator ? options.validator : default_validator(data, lm, config.valid_limit);
  return run(model, optimizer, data, config, phase, options, validator, start_epoch, start_step,
             std::move(history), options.resume);
}

TrainResult finetune(const Checkpoint& start, const TrainingData& data, const LmEncoder& lm,
                     const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("finetune: empty training corpus");
  if (!(start.target_vocab == lm.vocabulary())) {
    throw std::invalid_argument("finetune: checkpoint target vocabulary differs from the LM's");
  }
  Seq2SeqModel model = restore_model(start);

  Phase phase;
  phase.name = "finetune";
  phase.evaluate_start = true;
  phase.selection = [](const ValidationScores& s) { return s.fbert; };
  phase.loss = [&config, &lm](ad::Graph& g, const Seq2SeqModel& m,
                              std::span<const EncodedPair> batch, std::size_t step) {
    Rng noise(derive_seed(config.seed, kNoiseStream + step));
    return bertscore_loss(g, m, lm, batch, config.mode, noise);
  };

  const Validator validator =
      options.validator ? options.validator : default_validator(data, &lm, config.valid_limit);
  return run(model, OptimizerState{}, data, config, phase, options, validator, 0, 0, {},
             nullptr);
}

}  // namespace berttune
