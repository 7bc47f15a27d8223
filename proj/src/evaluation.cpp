#include "berttune/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "berttune/bleu.hpp"
#include "berttune/softpred.hpp"

namespace berttune {

namespace {

std::size_t budget(const Seq2SeqModel& model, const TokenIds& source, std::size_t extra) {
  return std::min(source.size() + extra, model.max_generation_length());
}

}  // namespace

DecodeMetrics decode_metrics(const Seq2SeqModel& model, std::span<const EncodedPair> pairs,
                             const LmEncoder* lm, const DecodeSettings& settings) {
  if (settings.beam == 0) throw std::invalid_argument("decode: beam size must be positive");
  if (lm && !(lm->vocabulary() == model.target_vocab())) {
    throw std::invalid_argument("decode: model target vocabulary differs from the LM's");
  }
  const std::size_t n =
      settings.limit == 0 ? pairs.size() : std::min(settings.limit, pairs.size());
  const Vocabulary& vocab = model.target_vocab();

  DecodeMetrics m;
  std::vector<TokenIds> references;
  double log_prob = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pair = pairs[i];
    const std::size_t max_len = budget(model, pair.source, settings.extra_length);
    Hypothesis h = settings.beam == 1
                       ? greedy_search(model.scorer(pair.source), vocab.eos(), max_len)
                       : model.beam_decode(pair.source, settings.beam, settings.length_penalty,
                                           max_len);
    log_prob += h.log_prob;
    TokenIds hyp = vocab.strip(h.tokens);
    TokenIds ref = vocab.strip(pair.target);
    if (lm) {
      const ScoreTriple s = score_hard(hyp, ref, *lm);
      m.precision += s.precision;
      m.recall += s.recall;
      m.fbert += s.f;
    }
    m.hypotheses.push_back(std::move(hyp));
    references.push_back(std::move(ref));
  }
  m.sentences = n;
  if (n > 0) {
    const double count = static_cast<double>(n);
    m.bleu = corpus_bleu<TokenId>(m.hypotheses, references);
    m.precision /= count;
    m.recall /= count;
    m.fbert /= count;
    m.mean_log_prob = log_prob / count;
  }
  return m;
}

nlohmann::json EvalReport::to_json() const {
  return {{"bleu", bleu},
          {"fbert", fbert},
          {"precision", precision},
          {"recall", recall},
          {"mean_log_prob", mean_log_prob},
          {"sentences", sentences},
          {"beam", beam},
          {"length_penalty", length_penalty}};
}

EvalReport evaluate(const Checkpoint& checkpoint, const LmEncoder& lm,
                    std::span<const SentencePair> testset, std::size_t beam,
                    double length_penalty) {
  if (!(checkpoint.target_vocab == lm.vocabulary())) {
    throw std::invalid_argument(
        "evaluate: checkpoint target vocabulary differs from the language model's");
  }
  Seq2SeqModel model = restore_model(checkpoint);
  const auto pairs = encode_pairs(testset, model.source_vocab(), model.target_vocab());
  DecodeSettings settings;
  settings.beam = beam;
  settings.length_penalty = length_penalty;
  const DecodeMetrics m = decode_metrics(model, pairs, &lm, settings);
  EvalReport r;
  r.bleu = m.bleu;
  r.fbert = m.fbert;
  r.precision = m.precision;
  r.recall = m.recall;
  r.mean_log_prob = m.mean_log_prob;
  r.sentences = m.sentences;
  r.beam = beam;
  r.length_penalty = length_penalty;
  return r;
}

EntropyReport entropy_report(const Seq2SeqModel& model, std::span<const EncodedPair> testset,
                             std::size_t bins, std::size_t extra_length) {
  if (bins == 0) throw std::invalid_argument("entropy report: bins must be positive");
  if (testset.empty()) throw std::invalid_argument("entropy report: empty test set");
  const TokenId eos = model.target_vocab().eos();
  EntropyReport r;
  r.vocab_size = model.target_vocab().size();

  std::vector<double> probs;
  for (const auto& pair : testset) {
    const NextTokenScorer scorer = model.scorer(pair.source);
    const std::size_t max_len = budget(model, pair.source, extra_length);
    TokenIds prefix;
    while (prefix.size() < max_len) {
      const std::vector<double> lp = scorer(prefix);
      probs.resize(lp.size());
      std::transform(lp.begin(), lp.end(), probs.begin(), [](double x) { return std::exp(x); });
      r.entropies.push_back(softpred::entropy(probs));
      const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      if (best == eos) break;
      prefix.push_back(best);
    }
  }

  const double top = std::log(static_cast<double>(r.vocab_size));
  for (std::size_t b = 0; b <= bins; ++b) {
    r.bin_edges.push_back(top * static_cast<double>(b) / static_cast<double>(bins));
  }
  r.counts.assign(bins, 0);
  for (double h : r.entropies) {
    auto b = static_cast<std::size_t>(std::clamp(h / top, 0.0, 1.0) * static_cast<double>(bins));
    ++r.counts[std::min(b, bins - 1)];
  }
  if (!r.entropies.empty()) {
    double total = 0.0;
    for (double h : r.entropies) total += h;
    r.mean = total / static_cast<double>(r.entropies.size());
    std::vector<double> sorted = r.entropies;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    r.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return r;
}

nlohmann::json EntropyReport::to_json() const {
  return {{"vocab_size", vocab_size}, {"steps", entropies.size()}, {"mean", mean},
          {"median", median},         {"bin_edges", bin_edges},     {"counts", counts}};
}

void write_entropy_csv(const EntropyReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "bin_lower,bin_upper,count\n";
  for (std::size_t b = 0; b < report.counts.size(); ++b) {
    out << report.bin_edges[b] << ',' << report.bin_edges[b + 1] << ',' << report.counts[b]
        << '\n';
  }
}

const Series& Curves::get(const std::string& metric) const {
  for (const auto& s : series) {
    if (s.metric == metric) return s;
  }
  throw std::out_of_range("no series named '" + metric + "'");
}

nlohmann::json Curves::to_json() const {
  nlohmann::json j;
  for (const auto& s : series) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& [step, value] : s.points) pts.push_back({{"step", step}, {"value", value}});
    j["series"][s.metric] = pts;
  }
  j["epoch_boundaries"] = epoch_boundaries;
  return j;
}

Curves export_curves(std::span<const MetricRow> rows) {
  Curves c;
  c.series = {{"train_loss", {}}, {"valid_bleu", {}}, {"valid_fbert", {}}};
  for (const auto& r : rows) {
    if (r.train_loss) c.series[0].points.emplace_back(r.step, *r.train_loss);
    if (r.valid_bleu) c.series[1].points.emplace_back(r.step, *r.valid_bleu);
    if (r.valid_fbert) c.series[2].points.emplace_back(r.step, *r.valid_fbert);
    if (r.epoch_end) c.epoch_boundaries.push_back(r.step);
  }
  return c;
}

Curves export_curves(const std::filesystem::path& metrics_csv) {
  const auto rows = read_metrics_csv(metrics_csv);
  return export_curves(rows);
}

}  // namespace berttune
