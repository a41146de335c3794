#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wsrank/corpus.hpp"

namespace wsrank {

enum class RankerMethod { Bm25, TfIdf, QueryLikelihood, Rm3 };

/// Accepts bm25, tfidf, ql, ql+rm3 (also rm3).
RankerMethod parse_ranker_method(std::string_view name);
std::string_view to_string(RankerMethod method);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct QlParams {
  double mu = 2500.0;
};

struct Rm3Params {
  std::size_t fb_docs = 10;
  std::size_t fb_terms = 10;
  double orig_weight = 0.5;
  /// Depth of the QL list that the expanded query re-scores.
  std::size_t depth = 1000;
};

struct RankerConfig {
  Bm25Params bm25;
  QlParams ql;
  Rm3Params rm3;

  /// Throws wsrank::Error when a parameter is out of range.
  void validate() const;
};

struct RankedEntry {
  std::string doc_id;
  double score;

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

/// Entries are ordered by descending score, ties by ascending doc_id.
struct RankedList {
  std::string query_id;
  std::string method;
  std::vector<RankedEntry> entries;
};

/// Applies the ranking order: score descending, then doc_id ascending.
void sort_entries(std::vector<RankedEntry>& entries);

/// Dirichlet-smoothed query likelihood. Query terms unseen in the collection
/// contribute nothing. Throws on an empty query.
double score_ql(const InvertedIndex& index, const Query& q, DocIndex d, double mu);
double score_bm25(const InvertedIndex& index, const Query& q, DocIndex d, double k1,
                  double b);
double score_tfidf(const InvertedIndex& index, const Query& q, DocIndex d);

struct WeightedTerm {
  TermId term;
  double weight;
};

/// Relevance model over the top fb_docs of `base`, truncated to the fb_terms
/// heaviest terms and renormalized.
std::vector<WeightedTerm> relevance_model(const InvertedIndex& index,
                                          const RankedList& base, const QlParams& ql,
                                          const Rm3Params& rm3);

/// Original query distribution interpolated with the relevance model.
std::vector<WeightedTerm> expand_query(const InvertedIndex& index, const Query& q,
                                       const RankedList& base, const QlParams& ql,
                                       const Rm3Params& rm3);

/// Cross-entropy of the query model against the smoothed document model.
double score_weighted_ql(const InvertedIndex& index,
                         const std::vector<WeightedTerm>& query_model, DocIndex d,
                         double mu);

/// Re-scores the documents of a QL list with the RM3-expanded query.
RankedList rm3_rerank(const InvertedIndex& index, const Query& q, const RankedList& base,
                      const RankerConfig& config);

/// Exact top-k over the whole collection.
RankedList retrieve_topk(const InvertedIndex& index, const Query& q, std::size_t k,
                         RankerMethod method, const RankerConfig& config = {});

/// A retrieval source: one of the unsupervised rankers, possibly perturbed.
class Ranker {
 public:
  virtual ~Ranker() = default;
  virtual std::string name() const = 0;
  virtual RankedList retrieve(const Query& q, std::size_t k) const = 0;
};

class MethodRanker : public Ranker {
 public:
  MethodRanker(const InvertedIndex& index, RankerMethod method, RankerConfig config)
      : index_(index), method_(method), config_(std::move(config)) {}

  std::string name() const override { return std::string(to_string(method_)); }
  RankedList retrieve(const Query& q, std::size_t k) const override {
    return retrieve_topk(index_, q, k, method_, config_);
  }

 private:
  const InvertedIndex& index_;
  RankerMethod method_;
  RankerConfig config_;
};

/// Adds seeded Gaussian noise to every document score of a method. The noise
/// for a (query, document) pair depends only on the seed and the two ids.
class NoisyRanker : public Ranker {
 public:
  NoisyRanker(const InvertedIndex& index, RankerMethod method, RankerConfig config,
              double noise_sd, std::uint64_t seed)
      : index_(index),
        method_(method),
        config_(std::move(config)),
        noise_sd_(noise_sd),
        seed_(seed) {}

  std::string name() const override;
  RankedList retrieve(const Query& q, std::size_t k) const override;

 private:
  const InvertedIndex& index_;
  RankerMethod method_;
  RankerConfig config_;
  double noise_sd_;
  std::uint64_t seed_;
};

/// TREC run format: `qid Q0 docid rank score tag`.
void write_trec_run(std::ostream& out, const RankedList& list, std::string_view tag);
void write_trec_run(const std::string& path, const std::vector<RankedList>& lists,
                    std::string_view tag);
/// query_id -> list; entries keep file order.
std::map<std::string, RankedList> read_trec_run(const std::string& path);

}  // namespace wsrank
