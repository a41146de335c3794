#include <algorithm>
#include <cmath>
#include <string>

#include "wsrank/corpus.hpp"
#include "wsrank/error.hpp"
#include "wsrank/random.hpp"

namespace wsrank {
namespace {

std::string padded(char prefix, std::size_t i, int width) {
  std::string digits = std::to_string(i);
  if (digits.size() < static_cast<std::size_t>(width)) {
    digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  }
  return prefix + digits;
}

std::vector<double> zipf_weights(std::size_t n, double s) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / std::pow(static_cast<double>(i + 1), s);
  return w;
}

/// Cumulative table for repeated categorical draws.
class Sampler {
 public:
  explicit Sampler(const std::vector<double>& weights) : cdf_(weights.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) cdf_[i] = acc += weights[i];
  }
  std::size_t draw(Rng& rng) const {
    const double u = rng.uniform() * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

// Topical share of a document's tokens, by judged grade.
double topical_share(int grade, Rng& rng) {
  switch (grade) {
    case 2: return rng.uniform(0.35, 0.55);
    case 1: return rng.uniform(0.12, 0.25);
    default: return rng.uniform(0.0, 0.08);
  }
}

}  // namespace

SyntheticWorld generate_synthetic(const SyntheticParams& p) {
  if (p.num_docs == 0 || p.num_queries == 0 || p.vocab_size == 0 ||
      p.terms_per_topic == 0 || p.relevant_per_topic == 0 || p.mean_doc_length == 0 ||
      p.embedding_dim == 0) {
    throw Error("synthetic world parameters must be positive");
  }
  if (!(p.relevance_noise >= 0.0 && p.relevance_noise <= 1.0)) {
    throw Error("relevance_noise must lie in [0, 1]");
  }
  if (p.relevant_per_topic < 10) {
    throw Error("relevant_per_topic must be at least 10");
  }
  const std::size_t topics =
      p.num_topics > 0 ? p.num_topics : std::max<std::size_t>(4, p.num_queries / 5);
  const std::size_t topical_vocab = topics * p.terms_per_topic;
  if (p.vocab_size < topical_vocab + 50) {
    throw Error("vocab_size too small: need at least " +
                std::to_string(topical_vocab + 50) + " terms");
  }
  if (p.num_docs < topics * p.relevant_per_topic) {
    throw Error("num_docs too small: need at least " +
                std::to_string(topics * p.relevant_per_topic) + " documents");
  }

  SyntheticWorld world;
  world.params = p;
  world.params.num_topics = topics;
  Rng rng(mix_seed(p.seed));

  std::vector<std::string> vocab(p.vocab_size);
  for (std::size_t i = 0; i < p.vocab_size; ++i) vocab[i] = padded('w', i, 5);
  // First topical_vocab terms are topical, in blocks of terms_per_topic.
  world.topic_terms.resize(topics);
  for (std::size_t t = 0; t < topics; ++t) {
    for (std::size_t j = 0; j < p.terms_per_topic; ++j) {
      world.topic_terms[t].push_back(vocab[t * p.terms_per_topic + j]);
    }
  }
  const Sampler background(zipf_weights(p.vocab_size - topical_vocab, 1.0));
  const Sampler topical(zipf_weights(p.terms_per_topic, 0.7));

  auto draw_background = [&](Rng& r) { return vocab[topical_vocab + background.draw(r)]; };
  auto draw_topical = [&](std::size_t topic, Rng& r) {
    return world.topic_terms[topic][topical.draw(r)];
  };

  // Judged documents per topic: a third at grade 2, the rest at grade 1. The
  // remaining documents are non-relevant, some carrying a little topical text.
  struct Plan {
    std::size_t topic;
    int grade;
  };
  std::vector<Plan> plans;
  plans.reserve(p.num_docs);
  for (std::size_t t = 0; t < topics; ++t) {
    for (std::size_t j = 0; j < p.relevant_per_topic; ++j) {
      plans.push_back({t, j < p.relevant_per_topic / 3 ? 2 : 1});
    }
  }
  while (plans.size() < p.num_docs) plans.push_back({rng.below(topics), 0});
  rng.shuffle(plans);

  const int width = static_cast<int>(std::to_string(p.num_docs).size()) + 1;
  for (std::size_t i = 0; i < p.num_docs; ++i) {
    const Plan& plan = plans[i];
    Rng doc_rng(child_seed(p.seed, i));
    int text_grade = plan.grade;
    if (plan.grade > 0 && doc_rng.bernoulli(p.relevance_noise)) {
      text_grade = static_cast<int>(doc_rng.below(3));
    }
    const double share = topical_share(text_grade, doc_rng);
    const auto len = static_cast<std::size_t>(
        doc_rng.uniform(0.5, 1.5) * static_cast<double>(p.mean_doc_length)) + 1;
    std::string text;
    for (std::size_t k = 0; k < len; ++k) {
      if (k > 0) text.push_back(' ');
      text += doc_rng.bernoulli(share) ? draw_topical(plan.topic, doc_rng)
                                       : draw_background(doc_rng);
    }
    std::string id = padded('D', i, width);
    world.docs.push_back(make_document(std::move(id), std::move(text)));
  }

  auto make_topic_query = [&](std::string id, std::size_t topic, Rng& r) {
    const std::size_t n_terms = 2 + r.below(3);
    std::vector<std::string> terms;
    while (terms.size() < n_terms) {
      std::string t = draw_topical(topic, r);
      if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(t);
    }
    std::string text;
    for (const auto& t : terms) text += (text.empty() ? "" : " ") + t;
    return make_query(std::move(id), std::move(text));
  };

  const int qwidth = static_cast<int>(std::to_string(p.num_queries).size()) + 1;
  for (std::size_t i = 0; i < p.num_queries; ++i) {
    const std::size_t topic = i % topics;
    Rng qrng(child_seed(p.seed ^ 0x5157ULL, i));
    world.queries.push_back(make_topic_query(padded('Q', i + 1, qwidth), topic, qrng));
    world.query_topics.push_back(topic);
    auto& gold = world.gold[world.queries.back().query_id];
    for (std::size_t d = 0; d < p.num_docs; ++d) {
      if (plans[d].topic == topic && plans[d].grade > 0) {
        gold[world.docs[d].doc_id] = plans[d].grade;
      }
    }
  }
  const int twidth = static_cast<int>(std::to_string(p.num_train_queries).size()) + 1;
  for (std::size_t i = 0; i < p.num_train_queries; ++i) {
    Rng qrng(child_seed(p.seed ^ 0x7472ULL, i));
    const std::size_t topic = qrng.below(topics);
    world.train_queries.push_back(make_topic_query(padded('T', i + 1, twidth), topic, qrng));
  }

  // Word vectors: topical terms cluster around their topic centroid.
  world.embeddings.dim = p.embedding_dim;
  Rng erng(child_seed(p.seed, "embeddings"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.embedding_dim));
  std::vector<std::vector<double>> centroids(topics, std::vector<double>(p.embedding_dim));
  for (auto& c : centroids) {
    for (double& x : c) x = erng.normal() * scale;
  }
  std::vector<double> vec(p.embedding_dim);
  for (std::size_t i = 0; i < p.vocab_size; ++i) {
    const bool is_topical = i < topical_vocab;
    for (std::size_t k = 0; k < p.embedding_dim; ++k) {
      const double noise = erng.normal() * scale;
      vec[k] = is_topical ? centroids[i / p.terms_per_topic][k] + 0.5 * noise : noise;
    }
    world.embeddings.add(vocab[i], vec);
  }
  return world;
}

}  // namespace wsrank
