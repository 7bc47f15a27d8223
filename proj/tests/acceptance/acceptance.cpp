// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Work files go to $TMPDIR/berttune_acceptance.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "berttune/beam_search.hpp"
#include "berttune/bertscore.hpp"
#include "berttune/bleu.hpp"
#include "berttune/evaluation.hpp"
#include "berttune/softpred.hpp"
#include "berttune/synthetic.hpp"
#include "berttune/training.hpp"
#include "fixtures.hpp"
#include "gradient_suite.hpp"
#include "oracles.hpp"

using namespace berttune;
using softpred::PredictionMode;
using softpred::PredictionVariant;

namespace {

int failures = 0;

void detail(const char* fmt, auto... args) {
  std::printf("    ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

void report(const std::string& name, bool ok, const std::string& summary) {
  std::printf("%s  %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), summary.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cases = gradsuite::primitive_cases();
  for (auto& c : gradsuite::pipeline_cases()) cases.push_back(std::move(c));
  double worst = 0.0;
  std::string worst_name;
  bool ok = true;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto r = gradsuite::run_case(cases[i], 100, 9000 + i);
    if (r.worst > worst) {
      worst = r.worst;
      worst_name = r.name;
    }
    if (!(r.worst < 1e-4)) {
      ok = false;
      detail("%s: max relative error %.3g", r.name.c_str(), r.worst);
    }
  }
  const double secs = seconds_since(t0);
  report("gradient suite", ok && secs < 120.0,
         fmt("%zu cases x 100 points, worst %.2e (%s) < 1e-4, %.1f s < 120 s", cases.size(), worst,
             worst_name.c_str(), secs));
}

void sparsemax_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t v = 1 + rng.index(6);
    std::vector<double> z(v);
    for (double& x : z) x = rng.normal() * (t % 2 ? 3.0 : 0.5);
    const auto got = softpred::sparsemax(z);
    const auto want = oracle::sparsemax_active_set(z);
    for (std::size_t i = 0; i < v; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  // Shift invariance on dyadic grids, where every shift is exact in floating point.
  bool shift_exact = true;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t v = 1 + rng.index(6);
    std::vector<double> z(v), shifted(v);
    const double c = static_cast<double>(static_cast<int>(rng.index(64)) - 32) / 4.0;
    for (std::size_t i = 0; i < v; ++i) {
      z[i] = static_cast<double>(static_cast<int>(rng.index(129)) - 64) / 16.0;
      shifted[i] = z[i] + c;
    }
    const auto a = softpred::sparsemax(z), b = softpred::sparsemax(shifted);
    for (std::size_t i = 0; i < v; ++i) shift_exact = shift_exact && a[i] == b[i];
  }
  bool uniform = true;
  for (std::size_t v = 1; v <= 64; ++v) {
    const auto p = softpred::sparsemax(std::vector<double>(v, 0.0));
    for (std::size_t i = 0; i < v; ++i) uniform = uniform && p[i] == 1.0 / static_cast<double>(v);
  }
  report("sparsemax oracle", worst <= 1e-10 && shift_exact && uniform,
         fmt("10000 cases max |diff| %.2e <= 1e-10; shift invariance exact: %s; zeros -> uniform: %s",
             worst, shift_exact ? "yes" : "no", uniform ? "yes" : "no"));
}

void gumbel_law() {
  const softpred::SoftDistribution p({0.5, 0.3, 0.2});
  Rng rng(7);
  std::vector<double> counts(3, 0.0);
  const int n = 100000;
  for (int t = 0; t < n; ++t) {
    const auto y = softpred::gumbel_softmax(p, 0.1, rng);
    const auto probs = y.probabilities();
    counts[static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin())] += 1;
  }
  double dev = 0.0;
  for (std::size_t i = 0; i < 3; ++i) dev = std::max(dev, std::abs(counts[i] / n - p[i]));
  report("gumbel-max law", dev <= 0.01,
         fmt("frequencies (%.4f, %.4f, %.4f), max deviation %.4f <= 0.01", counts[0] / n, counts[1] / n,
             counts[2] / n, dev));
}

void scorer_identities() {
  Rng rng(11);
  const LmEncoder identity = fixtures::identity_lm(20, 8, 1);
  const LmEncoder transformer = fixtures::transformer_lm(20, 8, 2);
  auto ids = [&](std::size_t v) {
    TokenIds out;
    for (std::size_t i = 0; i < 1 + rng.index(8); ++i) out.push_back(static_cast<TokenId>(4 + rng.index(v - 4)));
    return out;
  };
  double self_dev = 0.0;
  bool duality = true;
  double consistency = 0.0;
  for (int t = 0; t < 200; ++t) {
    for (const LmEncoder* lm : {&identity, &transformer}) {
      const TokenIds x = ids(lm->vocab_size()), y = ids(lm->vocab_size());
      const auto s = score_hard(x, x, *lm);
      self_dev = std::max({self_dev, std::abs(s.precision - 1), std::abs(s.recall - 1), std::abs(s.f - 1)});
      const auto a = score_hard(x, y, *lm), b = score_hard(y, x, *lm);
      duality = duality && a.precision == b.recall && a.recall == b.precision;
    }
    const TokenIds c = ids(identity.vocab_size()), r = ids(identity.vocab_size());
    std::vector<double> onehot(c.size() * identity.vocab_size(), 0.0);
    for (std::size_t i = 0; i < c.size(); ++i)
      onehot[i * identity.vocab_size() + static_cast<std::size_t>(c[i])] = 1.0;
    ad::Graph g(false);
    const ad::Tensor e = softpred::expected_embeddings(
        g, ad::Tensor({c.size(), identity.vocab_size()}, onehot), identity.embeddings());
    const auto soft = score_soft(g, e, r, identity).values();
    const auto hard = score_hard(c, r, identity);
    consistency = std::max({consistency, std::abs(soft.precision - hard.precision),
                            std::abs(soft.recall - hard.recall), std::abs(soft.f - hard.f)});
  }
  const LmEncoder ortho = LmEncoder::identity(
      fixtures::words_vocab(2), EmbeddingTable(6, 2, {0.3, 0.4, 0.5, 0.5, -0.7, 0.1, 0.2, -0.9, 1, 0, 0, 1}));
  const auto hand = score_hard(TokenIds{4}, TokenIds{4, 5}, ortho);
  const bool hand_ok = hand.precision == 1.0 && hand.recall == 0.5 && hand.f == 2.0 / 3.0;
  report("scorer identities",
         self_dev <= 1e-6 && duality && consistency <= 1e-9 && hand_ok,
         fmt("self-score dev %.1e <= 1e-6; role swap exact: %s; hard/soft dev %.1e <= 1e-9; "
             "hand case (%.17g, %.17g, %.17g)",
             self_dev, duality ? "yes" : "no", consistency, hand.precision, hand.recall, hand.f));
}

void beam_oracle() {
  bool exact = true, greedy_same = true;
  int cases = 0;
  const Vocabulary tgt = Vocabulary::with_sentinels(std::vector<std::string>{});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Seq2SeqModel model(fixtures::tiny_config(), fixtures::words_vocab(3), tgt, seed);
    for (auto& p : model.parameters())
      if (p.name == "output.weight")
        for (double& w : p.tensor.mutable_values()) w *= 8.0;
    for (TokenIds src : {TokenIds{4, 2}, TokenIds{5, 6, 4, 2}}) {
      const auto scorer = model.scorer(src);
      auto adapted = [&](const std::vector<int>& prefix) {
        const TokenIds ids(prefix.begin(), prefix.end());
        return scorer(ids);
      };
      const auto all = oracle::enumerate_sequences(adapted, tgt.eos(), 3);
      for (double alpha : {0.0, 1.0}) {
        const auto want = oracle::exhaustive_best(all, alpha);
        const Hypothesis got = model.beam_decode(src, 64, alpha, 3);
        exact = exact && std::vector<int>(got.tokens.begin(), got.tokens.end()) == want.tokens &&
                std::abs(got.log_prob - want.log_prob) <= 1e-12;
        ++cases;
      }
      for (std::size_t len : {3u, 8u, 15u}) {
        const Hypothesis g = greedy_search(scorer, tgt.eos(), len);
        const Hypothesis b = beam_search(scorer, tgt.eos(), 1, 1.0, len);
        greedy_same = greedy_same && g.tokens == b.tokens && g.log_prob == b.log_prob &&
                      model.greedy_decode(src, len) == model.beam_decode(src, 1, 1.0, len).tokens;
      }
    }
  }
  report("beam oracle", exact && greedy_same,
         fmt("%d V=4 max_len=3 searches equal exhaustive search: %s; beam-1 equals greedy: %s", cases,
             exact ? "yes" : "no", greedy_same ? "yes" : "no"));
}

void bleu_oracle() {
  Rng rng(31);
  std::vector<std::vector<int>> cands, refs;
  for (int k = 0; k < 1000; ++k) {
    std::vector<int> c, r;
    for (std::size_t i = 0; i < rng.index(15); ++i) c.push_back(static_cast<int>(rng.index(8)));
    for (std::size_t i = 0; i < 1 + rng.index(15); ++i) r.push_back(static_cast<int>(rng.index(8)));
    cands.push_back(c);
    refs.push_back(r);
  }
  const double got = corpus_bleu<int>(cands, refs), want = oracle::bleu(cands, refs);
  const double self = corpus_bleu<int>(refs, refs);
  report("BLEU oracle", std::abs(got - want) <= 1e-9 && self == 100.0,
         fmt("1000 pairs |diff| %.1e <= 1e-9; identical corpus %.17g", std::abs(got - want), self));
}

// ---------------------------------------------------------------------------
// Desk-scale runs on the synonym-cluster task.

struct SeedRun {
  std::uint64_t seed = 0;
  double baseline_exact = 0.0;
  double baseline_fbert = 0.0;
  double gumbel_fbert = 0.0;
  bool lm_frozen = false;
  double seconds = 0.0;
};

SyntheticSpec task_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.clusters = 20;
  s.synonyms = 3;
  s.train_size = 2000;
  s.valid_size = 200;
  s.test_size = 200;
  s.min_length = 3;
  s.max_length = 6;
  s.seed = seed;
  return s;
}

TrainConfig baseline_config(std::uint64_t seed) {
  TrainConfig c = TrainConfig::baseline_defaults();
  c.valid_limit = 100;
  c.seed = seed;
  return c;
}

TrainConfig finetune_config(std::uint64_t seed, PredictionMode mode) {
  TrainConfig c = TrainConfig::finetune_defaults();
  c.mode = mode;
  c.valid_limit = 100;
  c.seed = seed;
  return c;
}

DecodeMetrics validation(const Checkpoint& ckpt, const TrainingData& data, const LmEncoder& lm) {
  const Seq2SeqModel model = restore_model(ckpt);
  return decode_metrics(model, data.valid, &lm, DecodeSettings{});
}

std::vector<std::uint8_t> lm_bytes(const LmEncoder& lm) {
  std::vector<std::uint8_t> out;
  for (const auto& [name, t] : lm.tensors()) append_float32(out, t.values());
  return out;
}

struct HistogramInputs {
  std::vector<std::pair<std::string, Checkpoint>> models;
  std::vector<EncodedPair> test;
};

void end_to_end(HistogramInputs& hist, Checkpoint& curve_start,
                TrainingData& curve_data, std::optional<LmEncoder>& curve_lm) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SeedRun> runs;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto ts = std::chrono::steady_clock::now();
    const SyntheticTask task = make_synthetic_corpus(task_spec(seed));
    const Vocabulary source = build_source_vocabulary(task.corpus.train);
    const Vocabulary& target = task.lm.vocabulary();
    TrainingData data{encode_pairs(task.corpus.train, source, target),
                      encode_pairs(task.corpus.valid, source, target)};

    const TrainResult base =
        train_baseline(data, source, target, ModelConfig{}, baseline_config(seed), &task.lm);
    const DecodeMetrics bm = validation(base.best, data, task.lm);
    std::vector<TokenIds> refs;
    for (const auto& p : data.valid) refs.push_back(target.strip(p.target));
    SeedRun run;
    run.seed = seed;
    run.baseline_exact = cluster_exact_match(task, bm.hypotheses, refs);
    run.baseline_fbert = bm.fbert;

    const std::string digest = task.lm.parameter_digest();
    const auto bytes = lm_bytes(task.lm);
    const TrainResult gs = finetune(base.best, data, task.lm,
                                    finetune_config(seed, {PredictionVariant::gumbel_softmax, 0.1}));
    run.lm_frozen = task.lm.parameter_digest() == digest && lm_bytes(task.lm) == bytes;
    run.gumbel_fbert = validation(gs.best, data, task.lm).fbert;
    run.seconds = seconds_since(ts);
    detail("seed %llu: baseline %zu epochs, cluster exact %.3f, F_BERT %.4f; GS F_BERT %.4f "
           "(%zu epochs); %.1f s",
           static_cast<unsigned long long>(seed), base.epochs_run, run.baseline_exact, run.baseline_fbert,
           run.gumbel_fbert, gs.epochs_run, run.seconds);
    runs.push_back(run);

    if (seed == 0) {
      hist.test = encode_pairs(task.corpus.test, source, target);
      hist.models.emplace_back("baseline", base.best);
      hist.models.emplace_back("gumbel", gs.best);
      curve_start = base.best;
      curve_data = data;
      curve_lm.emplace(task.lm);
    }
  }
  const double secs = seconds_since(t0);

  bool frozen = true;
  for (const auto& r : runs) frozen = frozen && r.lm_frozen;
  report("frozen LM", frozen, "LM parameter bytes and digest identical across 3 full GS fine-tuning runs");

  double exact_min = 1.0, base_f = 0.0, gs_f = 0.0;
  for (const auto& r : runs) {
    exact_min = std::min(exact_min, r.baseline_exact);
    base_f += r.baseline_fbert / static_cast<double>(runs.size());
    gs_f += r.gumbel_fbert / static_cast<double>(runs.size());
  }
  report("end-to-end synonym task", exact_min >= 0.95 && gs_f >= base_f && secs < 600.0,
         fmt("min baseline cluster exact-match %.3f >= 0.95; mean validation F_BERT GS %.4f >= "
             "baseline %.4f; %.1f s < 600 s",
             exact_min, gs_f, base_f, secs));
}

void entropy_histograms(HistogramInputs& hist, const TrainingData& data, const LmEncoder& lm,
             const std::filesystem::path& work) {
  for (const auto& mode : {PredictionMode{PredictionVariant::dense, 0.1},
                           PredictionMode{PredictionVariant::sparsemax, 0.1}}) {
    const TrainResult r = finetune(hist.models.front().second, data, lm, finetune_config(0, mode));
    hist.models.emplace_back(softpred::to_string(mode.variant), r.best);
  }
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::vector<std::pair<double, std::string>> means;
  for (const auto& [name, ckpt] : hist.models) {
    const Seq2SeqModel model = restore_model(ckpt);
    const EntropyReport rep = entropy_report(model, hist.test, 20);
    write_entropy_csv(rep, work / ("entropy_" + name + ".csv"));
    const double max_h = std::log(static_cast<double>(rep.vocab_size));
    std::size_t total = 0;
    for (auto c : rep.counts) total += c;
    bool in_range = true;
    for (double h : rep.entropies) in_range = in_range && h >= 0.0 && h <= max_h + 1e-12;
    ok = ok && in_range && total == rep.entropies.size() && !rep.entropies.empty();
    means.emplace_back(rep.mean, name);
    detail("%-9s %zu steps, mean %.4f nats, median %.4f nats, ln V %.4f", name.c_str(),
           rep.entropies.size(), rep.mean, rep.median, max_h);
  }
  const double secs = seconds_since(t0);
  std::sort(means.begin(), means.end());
  std::string order;
  for (const auto& [m, name] : means) order += (order.empty() ? "" : " < ") + name;
  detail("mean entropy order: %s (gumbel sparsest: %s; logged only)", order.c_str(),
         means.front().second == "gumbel" ? "yes" : "no");
  report("entropy histograms", ok && secs < 60.0,
         fmt("%zu histograms, entropies within [0, ln V], counts conserved; %.1f s < 60 s",
             hist.models.size(), secs));
}

void metric_curves(const Checkpoint& start, const TrainingData& data, const LmEncoder& lm,
             const std::filesystem::path& work) {
  TrainConfig c = finetune_config(0, {PredictionVariant::gumbel_softmax, 0.1});
  c.max_epochs = 2;
  c.eval_every = 25;
  TrainOptions opts;
  opts.out_dir = work / "metric_curves";
  finetune(start, data, lm, c, opts);
  const auto rows = read_metrics_csv(*opts.out_dir / "metrics.csv");

  Seq2SeqModel base = restore_model(start);
  DecodeSettings s;
  s.limit = c.valid_limit;
  const DecodeMetrics bm = decode_metrics(base, data.valid, &lm, s);

  const auto& first = rows.front();
  const bool step0 = first.step == 0 && first.valid_bleu && first.valid_fbert &&
                     *first.valid_bleu == bm.bleu && *first.valid_fbert == bm.fbert;
  std::size_t validated = 0, epoch_marks = 0;
  bool increasing = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    validated += rows[i].valid_bleu && rows[i].valid_fbert;
    epoch_marks += rows[i].epoch_end;
    if (i > 0) increasing = increasing && rows[i].step == rows[i - 1].step + 1;
  }
  const Curves curves = export_curves(rows);
  const bool ok = step0 && increasing && epoch_marks == 2 && validated > 3 &&
                  curves.epoch_boundaries.size() == 2;
  report("metrics.csv curves", ok,
         fmt("%zu rows, step 0 = baseline (BLEU %.2f, F_BERT %.4f): %s; %zu validated rows; %zu "
             "epoch markers",
             rows.size(), bm.bleu, bm.fbert, step0 ? "yes" : "no", validated, epoch_marks));
}

}  // namespace

int main() {
  const auto work = std::filesystem::temp_directory_path() / "berttune_acceptance";
  std::filesystem::remove_all(work);
  std::filesystem::create_directories(work);

  const auto run = [](const char* name, auto&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(name, false, std::string("exception: ") + e.what());
    }
  };
  run("gradient suite", gradient_suite);
  run("sparsemax oracle", sparsemax_oracle);
  run("gumbel-max law", gumbel_law);
  run("scorer identities", scorer_identities);
  run("beam oracle", beam_oracle);
  run("BLEU oracle", bleu_oracle);

  HistogramInputs hist;
  Checkpoint curve_start;
  TrainingData curve_data;
  std::optional<LmEncoder> lm;
  run("end-to-end synonym task", [&] { end_to_end(hist, curve_start, curve_data, lm); });
  if (lm) {
    run("entropy histograms", [&] { entropy_histograms(hist, curve_data, *lm, work); });
    run("metrics.csv curves", [&] { metric_curves(curve_start, curve_data, *lm, work); });
  } else {
    report("entropy histograms", false, "no models from the synonym task");
    report("metrics.csv curves", false, "no models from the synonym task");
  }

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
