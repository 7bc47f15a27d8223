#include "berttune/synthetic.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "berttune/rng.hpp"

namespace berttune {

namespace {

constexpr std::size_t kSentinels = 4;
constexpr std::uint64_t kGeometryStream = 11;
constexpr std::uint64_t kSentenceStream = 12;
constexpr std::uint64_t kLayerStream = 13;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  for (double& x : v) x /= n;
}

std::vector<double> gaussian(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

std::size_t target_vocab_size(const SyntheticSpec& s) {
  return s.vocab_size == 0 ? s.clusters * s.synonyms + kSentinels : s.vocab_size;
}

}  // namespace

std::string cluster_word(std::size_t cluster) { return "c" + std::to_string(cluster); }

std::string synonym_word(std::size_t cluster, std::size_t synonym) {
  return "w" + std::to_string(cluster) + "_" + std::to_string(synonym);
}

void SyntheticSpec::validate() const {
  if (clusters == 0 || synonyms == 0 || dim == 0) {
    throw std::invalid_argument("synthetic: clusters, synonyms and dim must be positive");
  }
  if (clusters > dim) {
    throw std::invalid_argument("synthetic: infeasible geometry, " + std::to_string(clusters) +
                                " clusters need orthogonal centroids but dim is " +
                                std::to_string(dim));
  }
  if (target_vocab_size(*this) < clusters * synonyms + kSentinels) {
    throw std::invalid_argument("synthetic: vocabulary of " + std::to_string(vocab_size) +
                                " cannot hold " + std::to_string(clusters * synonyms) +
                                " words plus sentinels");
  }
  if (min_length == 0 || min_length > max_length) {
    throw std::invalid_argument("synthetic: bad sentence length range");
  }
  if (!(central_offset >= 0.0) || !(synonym_offset >= 0.0)) {
    throw std::invalid_argument("synthetic: offsets must be non-negative");
  }
}

std::optional<std::size_t> SyntheticTask::cluster_of(std::string_view word) const {
  if (word.size() < 4 || word[0] != 'w') return std::nullopt;
  const auto sep = word.find('_');
  if (sep == std::string_view::npos) return std::nullopt;
  try {
    const std::size_t c = std::stoul(std::string(word.substr(1, sep - 1)));
    const std::size_t s = std::stoul(std::string(word.substr(sep + 1)));
    if (c < clusters && s < synonyms && synonym_word(c, s) == word) return c;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

std::vector<std::size_t> SyntheticTask::clusters_of(std::span<const TokenId> ids) const {
  const Vocabulary& vocab = lm.vocabulary();
  std::vector<std::size_t> out;
  for (TokenId id : vocab.strip(ids)) {
    out.push_back(cluster_of(vocab.token(id)).value_or(std::numeric_limits<std::size_t>::max()));
  }
  return out;
}

SyntheticTask make_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.dim, c = spec.clusters, s = spec.synonyms;
  const std::size_t vocab_size = target_vocab_size(spec);

  std::vector<std::string> words;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t j = 0; j < s; ++j) words.push_back(synonym_word(k, j));
  for (std::size_t f = words.size() + kSentinels; f < vocab_size; ++f)
    words.push_back("x" + std::to_string(f));
  Vocabulary vocab = Vocabulary::with_sentinels(words);

  Rng rng(derive_seed(spec.seed, kGeometryStream));
  std::vector<std::vector<double>> centroids;
  while (centroids.size() < c) {
    std::vector<double> v = gaussian(rng, d);
    for (const auto& u : centroids) {
      const double p = dot(v, u);
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * u[i];
    }
    if (std::sqrt(dot(v, v)) < 1e-6) continue;
    normalize(v);
    centroids.push_back(std::move(v));
  }

  std::vector<double> table(vocab_size * d, 0.0);
  auto row = [&](std::size_t id) { return std::span<double>(table.data() + id * d, d); };
  std::vector<std::vector<std::size_t>> members(c);
  for (std::size_t id = 0; id < vocab_size; ++id) {
    std::vector<double> v = gaussian(rng, d);
    std::optional<std::size_t> k, j;
    const std::string& token = vocab.token(static_cast<TokenId>(id));
    if (token.size() > 1 && token[0] == 'w') {
      const auto sep = token.find('_');
      k = std::stoul(token.substr(1, sep - 1));
      j = std::stoul(token.substr(sep + 1));
    }
    if (k) {
      const auto& u = centroids[*k];
      const double p = dot(v, u);
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * u[i];
      normalize(v);
      const double offset = *j == 0 ? spec.central_offset : spec.synonym_offset;
      for (std::size_t i = 0; i < d; ++i) v[i] = u[i] + offset * v[i];
      members[*k].push_back(id);
    }
    normalize(v);
    std::copy(v.begin(), v.end(), row(id).begin());
  }
  // float32 storage is what the LM keeps; check the rounded geometry.
  round_to_float32(table);

  auto cosine = [&](std::size_t a, std::size_t b) {
    return dot(row(a), row(b)) / std::sqrt(dot(row(a), row(a)) * dot(row(b), row(b)));
  };
  GeometryReport geo;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a + 1; b < c; ++b) {
      geo.max_centroid_cosine = std::max(geo.max_centroid_cosine, dot(centroids[a], centroids[b]));
    }
    for (std::size_t x : members[a]) {
      for (std::size_t y : members[a])
        if (x < y) geo.min_within_cosine = std::min(geo.min_within_cosine, cosine(x, y));
      for (std::size_t b = a + 1; b < c; ++b)
        for (std::size_t y : members[b])
          geo.max_cross_cosine = std::max(geo.max_cross_cosine, cosine(x, y));
    }
  }
  if (geo.min_within_cosine < kWithinClusterCosine || geo.max_cross_cosine > kCrossClusterCosine ||
      geo.max_centroid_cosine > kCrossClusterCosine) {
    throw std::runtime_error("synthetic: generated embeddings miss the cosine bounds (within " +
                             std::to_string(geo.min_within_cosine) + ", cross " +
                             std::to_string(geo.max_cross_cosine) + ")");
  }

  EmbeddingTable embeddings(vocab_size, d, std::move(table));
  const std::size_t lm_length = std::max<std::size_t>(64, spec.max_length + 2);
  SyntheticTask task{
      .corpus = {},
      .lm = spec.lm_mode == LmMode::identity
                ? LmEncoder::identity(vocab, std::move(embeddings), lm_length)
                : LmEncoder::random_transformer(
                      vocab, std::move(embeddings),
                      LmConfig{LmMode::transformer, 1, d % 2 == 0 ? std::size_t{2} : std::size_t{1},
                               2 * d, lm_length},
                      derive_seed(spec.seed, kLayerStream)),
      .geometry = geo,
      .clusters = c,
      .synonyms = s,
  };

  Rng sentences(derive_seed(spec.seed, kSentenceStream));
  auto draw = [&](std::size_t n) {
    std::vector<SentencePair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len =
          spec.min_length + sentences.index(spec.max_length - spec.min_length + 1);
      SentencePair p;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t k = sentences.index(c);
        const std::size_t j = sentences.index(s);
        if (t > 0) {
          p.source += ' ';
          p.target += ' ';
        }
        p.source += cluster_word(k);
        p.target += synonym_word(k, j);
      }
      out.push_back(std::move(p));
    }
    return out;
  };
  task.corpus.train = draw(spec.train_size);
  task.corpus.valid = draw(spec.valid_size);
  task.corpus.test = draw(spec.test_size);
  return task;
}

void write_synthetic_task(const SyntheticTask& task, const std::filesystem::path& dir) {
  save_corpus(task.corpus, dir);
  save_lm(task.lm, dir / "lm");
}

double cluster_exact_match(const SyntheticTask& task, std::span<const TokenIds> hypotheses,
                           std::span<const TokenIds> references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("cluster_exact_match: count mismatch");
  }
  if (hypotheses.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (task.clusters_of(hypotheses[i]) == task.clusters_of(references[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(hypotheses.size());
}

}  // namespace berttune
