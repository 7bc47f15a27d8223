#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "berttune/evaluation.hpp"
#include "berttune/training.hpp"
#include "fixtures.hpp"

using namespace berttune;
using softpred::PredictionMode;
using softpred::PredictionVariant;

namespace {

ad::Tensor* find(Seq2SeqModel& m, const std::string& name) {
  for (auto& p : m.parameters())
    if (p.name == name) return &p.tensor;
  throw std::runtime_error("no parameter " + name);
}

ad::Tensor random_rows(std::size_t l, std::size_t v, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> p(l * v);
  for (std::size_t r = 0; r < l; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < v; ++k) s += p[r * v + k] = rng.uniform(0.01, 1.0);
    for (std::size_t k = 0; k < v; ++k) p[r * v + k] /= s;
  }
  return ad::Tensor({l, v}, p);
}

/// Random pairs over words w0..w{words-1}; both sides use sentinel ids 0..3.
std::vector<EncodedPair> random_batch(std::size_t n, std::size_t words, std::uint64_t seed,
                                      std::size_t max_len = 4) {
  Rng rng(seed);
  std::vector<EncodedPair> batch;
  for (std::size_t k = 0; k < n; ++k) {
    EncodedPair p;
    p.target.push_back(0);
    for (std::size_t i = 0; i < 1 + rng.index(max_len); ++i)
      p.source.push_back(static_cast<TokenId>(4 + rng.index(words)));
    for (std::size_t i = 0; i < 1 + rng.index(max_len); ++i)
      p.target.push_back(static_cast<TokenId>(4 + rng.index(words)));
    p.source.push_back(2);
    p.target.push_back(2);
    batch.push_back(p);
  }
  return batch;
}

std::vector<double> flat(const Checkpoint& c) {
  std::vector<double> v;
  for (const auto& t : c.parameters) v.insert(v.end(), t.values.begin(), t.values.end());
  return v;
}

const PredictionMode kModes[] = {
    {PredictionVariant::dense, 0.1},
    {PredictionVariant::sparsemax, 0.1},
    {PredictionVariant::gumbel_softmax, 0.1},
};

}  // namespace

// ---------------------------------------------------------------------------
// Losses

TEST(LabelSmoothedNll, PerfectPredictionCostsNothing) {
  std::vector<double> p(3 * 5, 0.0);
  const TokenIds targets{4, 2, 3};
  for (std::size_t r = 0; r < 3; ++r) p[r * 5 + static_cast<std::size_t>(targets[r])] = 1.0;
  ad::Graph g(false);
  const double loss = label_smoothed_nll(g, ad::Tensor({3, 5}, p), targets, 0.0, 1).item();
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(LabelSmoothedNll, UniformRowsCostLogV) {
  for (double eps : {0.0, 0.1, 0.5}) {
    const std::size_t v = 50;
    ad::Graph g(false);
    const ad::Tensor probs({4, v}, std::vector<double>(4 * v, 1.0 / v));
    EXPECT_NEAR(label_smoothed_nll(g, probs, TokenIds{5, 9, 2, 4}, eps, 1).item(), std::log(50.0),
                1e-12);
  }
}

TEST(LabelSmoothedNll, MatchesDoubleLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t l = 7, v = 9;
    const ad::Tensor probs = random_rows(l, v, seed);
    Rng rng(seed + 100);
    TokenIds targets(l);
    for (auto& t : targets) t = static_cast<TokenId>(rng.index(v));
    targets[3] = 1;  // pad
    double total = 0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < l; ++j) {
      if (targets[j] == 1) continue;
      double smooth = 0;
      for (std::size_t i = 0; i < v; ++i) smooth += std::log(std::max(probs.at(j, i), 1e-12));
      total -= 0.9 * std::log(probs.at(j, static_cast<std::size_t>(targets[j]))) + 0.1 / v * smooth;
      ++count;
    }
    ad::Graph g(false);
    EXPECT_NEAR(label_smoothed_nll(g, probs, targets, 0.1, 1).item(), total / count, 1e-10);
  }
}

TEST(LabelSmoothedNll, RejectsLengthMismatch) {
  ad::Graph g(false);
  EXPECT_THROW(label_smoothed_nll(g, random_rows(3, 4, 0), TokenIds{1, 2}, 0.1, 1),
               std::invalid_argument);
}

TEST(BertscoreLoss, PointMassesOnReferenceGiveMinusOne) {
  const LmEncoder lm = fixtures::identity_lm(6, 8, 3);
  Seq2SeqModel model(fixtures::tiny_config(), fixtures::words_vocab(4), lm.vocabulary(), 0);
  for (double& w : find(model, "output.weight")->mutable_values()) w = 0.0;
  find(model, "output.bias")->mutable_values()[7] = 1e3;
  const std::vector<EncodedPair> batch{{{4, 5, 2}, {0, 7, 7, 7, 2}}, {{6, 2}, {0, 7, 2}}};
  for (const auto& mode : kModes) {
    ad::Graph g(false);
    Rng rng(1);
    EXPECT_NEAR(bertscore_loss(g, model, lm, batch, mode, rng).item(), -1.0, 1e-6)
        << softpred::to_string(mode.variant);
  }
}

TEST(BertscoreLoss, StaysWithinBounds) {
  const LmEncoder lms[] = {fixtures::identity_lm(6, 8, 4), fixtures::transformer_lm(6, 8, 4)};
  for (const auto& lm : lms) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Seq2SeqModel model(fixtures::tiny_config(), fixtures::words_vocab(5), lm.vocabulary(), seed);
      const auto batch = random_batch(3, 5, seed);
      for (const auto& mode : kModes) {
        ad::Graph g(false);
        Rng rng(seed);
        const double loss = bertscore_loss(g, model, lm, batch, mode, rng).item();
        ASSERT_GE(loss, -1.0 - 1e-12);
        ASSERT_LE(loss, 1.0 + 1e-12);
      }
    }
  }
}

TEST(BertscoreLoss, RejectsVocabularyMismatch) {
  const LmEncoder lm = fixtures::identity_lm(6, 8, 3);
  const Seq2SeqModel model(fixtures::tiny_config(), fixtures::words_vocab(4), fixtures::words_vocab(5), 0);
  ad::Graph g(false);
  Rng rng(0);
  EXPECT_THROW(bertscore_loss(g, model, lm, random_batch(1, 4, 0), kModes[0], rng),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Gradients

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

/// Central differences on sampled coordinates of named model parameters.
double worst_parameter_error(Seq2SeqModel& model,
                             const std::function<ad::Tensor(ad::Graph&)>& loss_fn,
                             const std::vector<std::string>& names, std::uint64_t seed) {
  model.zero_grad();
  {
    ad::Graph g;
    g.backward(loss_fn(g));
  }
  Rng rng(seed);
  double worst = 0.0;
  const double h = 1e-5;
  for (const auto& name : names) {
    ad::Tensor* t = find(model, name);
    const std::vector<double> grad(t->grad().begin(), t->grad().end());
    for (int k = 0; k < 6; ++k) {
      const std::size_t i = rng.index(t->size());
      const double saved = t->values()[i];
      t->mutable_values()[i] = saved + h;
      ad::Graph gp(false);
      const double up = loss_fn(gp).item();
      t->mutable_values()[i] = saved - h;
      ad::Graph gm(false);
      const double down = loss_fn(gm).item();
      t->mutable_values()[i] = saved;
      worst = std::max(worst, relative_error(grad[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace

TEST(BertscoreLoss, DecoderGradientsMatchFiniteDifferences) {
  const LmEncoder lms[] = {fixtures::identity_lm(6, 8, 5), fixtures::transformer_lm(6, 8, 5)};
  const std::vector<std::string> names{"output.weight", "output.bias",
                                       "decoder.0.ffn.expand.weight", "encoder.0.ffn.contract.weight"};
  for (const auto& lm : lms) {
    for (const auto& mode : kModes) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Seq2SeqModel model(fixtures::tiny_config(), fixtures::words_vocab(5), lm.vocabulary(), seed);
        for (double& w : find(model, "output.weight")->mutable_values()) w *= 4.0;
        const auto batch = random_batch(2, 5, seed + 10);
        auto loss_fn = [&](ad::Graph& g) {
          Rng noise(77 + seed);
          return bertscore_loss(g, model, lm, batch, mode, noise);
        };
        EXPECT_LT(worst_parameter_error(model, loss_fn, names, seed), 1e-4)
            << softpred::to_string(mode.variant) << " seed " << seed;
      }
    }
  }
}

TEST(NllLoss, DecoderGradientsMatchFiniteDifferences) {
  Seq2SeqModel model(fixtures::tiny_config(), fixtures::words_vocab(5), fixtures::words_vocab(6), 1);
  const auto batch = random_batch(3, 5, 2);
  auto loss_fn = [&](ad::Graph& g) { return nll_loss(g, model, batch, 0.1); };
  EXPECT_LT(worst_parameter_error(model, loss_fn,
                                  {"output.weight", "decoder.0.ffn.expand.weight", "encoder.0.ffn.contract.weight"}, 3),
            1e-4);
}

TEST(BertscoreLoss, GradientReachesEncoderAndDecoderOnGenericBatches) {
  const LmEncoder lm = fixtures::transformer_lm(6, 8, 6);
  Seq2SeqModel model(fixtures::tiny_config(), fixtures::words_vocab(5), lm.vocabulary(), 6);
  auto norm = [](const ad::Tensor& t) {
    double s = 0;
    for (double x : t.grad()) s += x * x;
    return s;
  };
  for (const auto& mode : kModes) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      model.zero_grad();
      ad::Graph g;
      Rng rng(seed);
      g.backward(bertscore_loss(g, model, lm, random_batch(4, 5, seed + 500), mode, rng));
      ASSERT_GT(norm(*find(model, "decoder.0.ffn.expand.weight")), 0.0) << seed;
      ASSERT_GT(norm(*find(model, "encoder.0.ffn.expand.weight")), 0.0) << seed;
      ASSERT_GT(norm(*find(model, "output.weight")), 0.0) << seed;
    }
  }
}

// ---------------------------------------------------------------------------
// Optimiser

namespace {

std::vector<NamedParameter> two_params(double a, double b) {
  return {{"a", ad::Tensor({1, 1}, {a}, true)}, {"b", ad::Tensor({1, 1}, {b}, true)}};
}

void set_grads(std::vector<NamedParameter>& ps, std::initializer_list<double> gs) {
  auto it = gs.begin();
  for (auto& p : ps) {
    p.tensor.zero_grad();
    p.tensor.mutable_grad()[0] = *it++;
  }
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRateAgainstGradient) {
  TrainConfig c;
  auto ps = two_params(0.5, -0.25);
  set_grads(ps, {0.3, -2e-3});
  OptimizerState s;
  adam_step(ps, s, c, 1e-3);
  EXPECT_NEAR(ps[0].tensor.values()[0] - 0.5, -1e-3, 1e-5);
  EXPECT_NEAR(ps[1].tensor.values()[0] + 0.25, 1e-3, 1e-5);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  TrainConfig c;
  auto ps = two_params(0.5, -0.25);
  OptimizerState s;
  set_grads(ps, {0.0, 0.0});
  adam_step(ps, s, c, 1e-3);
  EXPECT_EQ(ps[0].tensor.values()[0], 0.5);
  EXPECT_EQ(ps[1].tensor.values()[0], -0.25);
  s.first = {{0.2}, {0.4}};
  s.second = {{0.01}, {0.02}};
  set_grads(ps, {0.0, 0.0});
  adam_step(ps, s, c, 1e-3);
  EXPECT_DOUBLE_EQ(s.first[0][0], 0.9 * 0.2);
  EXPECT_DOUBLE_EQ(s.second[1][0], 0.98 * 0.02);
}

TEST(Adam, TwoStepsMatchHandComputation) {
  TrainConfig c;
  c.beta1 = 0.9;
  c.beta2 = 0.98;
  c.epsilon = 1e-8;
  const double lr = 2e-3;
  auto ps = two_params(0.5, -1.0);
  OptimizerState s;
  const double g1[2] = {0.1, -0.2}, g2[2] = {0.05, 0.3};
  set_grads(ps, {g1[0], g1[1]});
  adam_step(ps, s, c, lr);
  set_grads(ps, {g2[0], g2[1]});
  adam_step(ps, s, c, lr);

  const double start[2] = {0.5, -1.0};
  for (int i = 0; i < 2; ++i) {
    double p = start[i], m = 0, v = 0;
    const double gs[2] = {g1[i], g2[i]};
    for (int t = 1; t <= 2; ++t) {
      m = 0.9 * m + 0.1 * gs[t - 1];
      v = 0.98 * v + 0.02 * gs[t - 1] * gs[t - 1];
      const double mhat = m / (1 - std::pow(0.9, t));
      const double vhat = v / (1 - std::pow(0.98, t));
      p -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
    EXPECT_NEAR(ps[static_cast<std::size_t>(i)].tensor.values()[0], p, 1e-12);
  }
}

TEST(Adam, NonFiniteGradientIsRejectedBeforeAnyUpdate) {
  TrainConfig c;
  auto ps = two_params(0.5, -0.25);
  OptimizerState s;
  set_grads(ps, {0.1, 0.1});
  adam_step(ps, s, c, 1e-3);
  const OptimizerState before = s;
  const double a = ps[0].tensor.values()[0];
  set_grads(ps, {0.1, std::nan("")});
  try {
    adam_step(ps, s, c, 1e-3);
    FAIL() << "expected NonFiniteGradient";
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.parameter(), "b");
  }
  EXPECT_EQ(ps[0].tensor.values()[0], a);
  EXPECT_EQ(s, before);
}

TEST(Schedule, WarmupThenInverseSqrtDecay) {
  TrainConfig c;
  c.learning_rate = 5e-4;
  c.warmup_steps = 200;
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 1), 5e-4 / 200);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 100), 2.5e-4);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 200), 5e-4);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 800), 2.5e-4);
  const TrainConfig f = TrainConfig::finetune_defaults();
  EXPECT_EQ(scheduled_learning_rate(f, 1), 5e-5);
  EXPECT_EQ(scheduled_learning_rate(f, 10000), 5e-5);
}

TEST(TrainConfig, RejectsInvalidSettings) {
  TrainConfig c;
  c.patience = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.label_smoothing = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.mode = {PredictionVariant::gumbel_softmax, 0.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

struct ToyRun {
  LmEncoder lm = fixtures::identity_lm(6, 8, 9);
  Vocabulary source = fixtures::words_vocab(6);
  TrainingData data{random_batch(40, 6, 1), random_batch(8, 6, 2)};

  TrainConfig config() const {
    TrainConfig c;
    c.batch_size = 8;
    c.warmup_steps = 10;
    c.learning_rate = 1e-2;
    c.max_epochs = 4;
    c.patience = 10;
    c.seed = 3;
    return c;
  }
};

}  // namespace

TEST(TrainBaseline, PatienceOneStopsAfterTwoValidationsOnDecayingMetric) {
  ToyRun toy;
  double metric = 10.0;
  TrainOptions opts;
  opts.validator = [&metric](const Seq2SeqModel&) {
    metric -= 1.0;
    return ValidationScores{metric, 0.0};
  };
  TrainConfig c = toy.config();
  c.patience = 1;
  const TrainResult r = train_baseline(toy.data, toy.source, toy.lm.vocabulary(),
                                       fixtures::tiny_config(), c, &toy.lm, opts);
  EXPECT_EQ(r.validations, 2u);
  EXPECT_EQ(r.epochs_run, 2u);
  EXPECT_EQ(r.best.epoch, 1u);
  EXPECT_EQ(r.last.epoch, 2u);
}

TEST(TrainBaseline, RejectsEmptyCorpusAndForeignVocabulary) {
  ToyRun toy;
  EXPECT_THROW(train_baseline(TrainingData{{}, toy.data.valid}, toy.source, toy.lm.vocabulary(),
                              fixtures::tiny_config(), toy.config(), &toy.lm),
               std::invalid_argument);
  EXPECT_THROW(train_baseline(toy.data, toy.source, fixtures::words_vocab(9),
                              fixtures::tiny_config(), toy.config(), &toy.lm),
               std::invalid_argument);
}

TEST(TrainBaseline, ResumeReproducesUninterruptedRun) {
  ToyRun toy;
  const TrainConfig full_config = toy.config();
  const TrainResult full = train_baseline(toy.data, toy.source, toy.lm.vocabulary(),
                                          fixtures::tiny_config(), full_config, &toy.lm);
  ASSERT_EQ(full.epochs_run, 4u);

  TrainConfig half_config = full_config;
  half_config.max_epochs = 2;
  const TrainResult half = train_baseline(toy.data, toy.source, toy.lm.vocabulary(),
                                          fixtures::tiny_config(), half_config, &toy.lm);
  const auto dir = fixtures::scratch_dir("resume");
  save_checkpoint(half.last, dir);
  const Checkpoint from_disk = load_checkpoint(dir);
  TrainOptions opts;
  opts.resume = &from_disk;
  const TrainResult resumed = train_baseline(toy.data, toy.source, toy.lm.vocabulary(),
                                             fixtures::tiny_config(), full_config, &toy.lm, opts);
  ASSERT_EQ(resumed.epoch_losses.size(), 2u);
  EXPECT_EQ(resumed.epoch_losses[0], full.epoch_losses[2]);
  EXPECT_EQ(resumed.epoch_losses[1], full.epoch_losses[3]);
  EXPECT_EQ(flat(resumed.last), flat(full.last));
  EXPECT_EQ(resumed.last.optimizer, full.last.optimizer);
}

TEST(TrainBaseline, SameSeedGivesIdenticalCheckpoints) {
  ToyRun toy;
  TrainConfig c = toy.config();
  c.max_epochs = 2;
  const auto a = train_baseline(toy.data, toy.source, toy.lm.vocabulary(), fixtures::tiny_config(), c, &toy.lm);
  const auto b = train_baseline(toy.data, toy.source, toy.lm.vocabulary(), fixtures::tiny_config(), c, &toy.lm);
  EXPECT_EQ(a.last.blob_digest(), b.last.blob_digest());
}

TEST(Finetune, ZeroStepsReturnsStartParameters) {
  ToyRun toy;
  TrainConfig c = toy.config();
  c.max_epochs = 1;
  const auto base = train_baseline(toy.data, toy.source, toy.lm.vocabulary(), fixtures::tiny_config(), c, &toy.lm);
  TrainConfig f = TrainConfig::finetune_defaults();
  f.max_epochs = 0;
  const TrainResult r = finetune(base.best, toy.data, toy.lm, f);
  EXPECT_EQ(flat(r.best), flat(base.best));
  EXPECT_EQ(r.validations, 1u);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].step, 0u);
}

TEST(Finetune, LeavesLanguageModelUntouchedAndLogsCurves) {
  const LmEncoder lm = fixtures::transformer_lm(6, 8, 11);
  ToyRun toy;
  TrainConfig c = toy.config();
  c.max_epochs = 1;
  const auto base = train_baseline(toy.data, toy.source, lm.vocabulary(), fixtures::tiny_config(), c, &lm);
  const std::string before = lm.parameter_digest();
  const auto dir = fixtures::scratch_dir("finetune_run");
  for (const auto& mode : kModes) {
    TrainConfig f = TrainConfig::finetune_defaults();
    f.mode = mode;
    f.max_epochs = 2;
    f.batch_size = 8;
    f.eval_every = 2;
    TrainOptions opts;
    opts.out_dir = dir;
    const TrainResult r = finetune(base.best, toy.data, lm, f, opts);
    EXPECT_EQ(lm.parameter_digest(), before);
    EXPECT_EQ(r.metrics.front().step, 0u);
    EXPECT_TRUE(r.metrics.front().valid_fbert.has_value());
    const auto rows = read_metrics_csv(dir / "metrics.csv");
    EXPECT_EQ(rows, r.metrics);
    EXPECT_EQ(std::count_if(rows.begin(), rows.end(), [](const MetricRow& m) { return m.epoch_end; }), 2);
    EXPECT_TRUE(std::filesystem::exists(dir / "best" / "ckpt.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "last" / "ckpt.json"));
  }
}

TEST(Finetune, RejectsForeignLanguageModel) {
  ToyRun toy;
  TrainConfig c = toy.config();
  c.max_epochs = 1;
  const auto base = train_baseline(toy.data, toy.source, toy.lm.vocabulary(), fixtures::tiny_config(), c, &toy.lm);
  const LmEncoder other = fixtures::identity_lm(7, 8, 1);
  EXPECT_THROW(finetune(base.best, toy.data, other, TrainConfig::finetune_defaults()),
               std::invalid_argument);
}

TEST(TrainBaseline, LearnsCopyTask) {
  const std::size_t words = 46;
  const Vocabulary vocab = fixtures::words_vocab(words);
  ASSERT_EQ(vocab.size(), 50u);
  auto copies = [&](std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<EncodedPair> out;
    for (std::size_t k = 0; k < n; ++k) {
      TokenIds s;
      for (std::size_t i = 0; i < 3 + rng.index(4); ++i) s.push_back(static_cast<TokenId>(4 + rng.index(words)));
      EncodedPair p;
      p.source = s;
      p.source.push_back(2);
      p.target.push_back(0);
      p.target.insert(p.target.end(), s.begin(), s.end());
      p.target.push_back(2);
      out.push_back(p);
    }
    return out;
  };
  const TrainingData data{copies(2000, 0), copies(200, 1)};
  TrainConfig c = TrainConfig::baseline_defaults();
  c.max_epochs = 30;
  c.valid_limit = 100;
  c.seed = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train_baseline(data, vocab, vocab, ModelConfig{}, c, nullptr);
  const Seq2SeqModel model = restore_model(r.best);
  std::size_t exact = 0;
  for (const auto& p : data.valid) {
    const TokenIds out = model.greedy_decode(p.source, p.source.size() + 10);
    exact += out == vocab.strip(p.target);
  }
  const double rate = static_cast<double>(exact) / data.valid.size();
  std::printf("copy task: exact match %.3f after %zu epochs (%.1f s)\n", rate, r.epochs_run,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  EXPECT_GE(rate, 0.95);
  EXPECT_LE(r.epochs_run, 30u);
}
