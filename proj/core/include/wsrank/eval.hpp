#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsrank/corpus.hpp"
#include "wsrank/rankernet.hpp"
#include "wsrank/rankers.hpp"

namespace wsrank {

enum class Gain { Linear, Exponential };

/// doc_id -> grade for one query.
using Grades = std::map<std::string, int>;

/// NDCG@k; nullopt when the query has no relevant document.
std::optional<double> ndcg_at_k(const std::vector<std::string>& ranking, const Grades& gold,
                                std::size_t k, Gain gain = Gain::Linear);
/// Relevant (grade >= 1) documents in the top k, divided by k.
double prec_at_k(const std::vector<std::string>& ranking, const Grades& gold, std::size_t k);
/// nullopt when the query has no relevant document.
std::optional<double> average_precision(const std::vector<std::string>& ranking,
                                        const Grades& gold);

std::vector<std::string> doc_ids(const RankedList& list);

struct QueryMetrics {
  std::string query_id;
  double ndcg = 0.0;
  double precision = 0.0;
  double average_precision = 0.0;
};

struct EvalResult {
  std::string tag;
  std::size_t k = 10;
  std::vector<QueryMetrics> per_query;  // sorted by query_id
  double mean_ndcg = 0.0;
  double mean_precision = 0.0;
  double mean_ap = 0.0;

  std::size_t query_count() const { return per_query.size(); }
};

/// Scores `run` on the given queries. Queries without a relevant document
/// are left out; judged queries missing from the run score 0.
EvalResult evaluate_run(const std::string& tag, const std::map<std::string, RankedList>& run,
                        const std::vector<std::string>& query_ids, const Qrels& gold,
                        std::size_t k = 10, Gain gain = Gain::Linear);

/// Re-scores `base` with the model. Documents without in-vocabulary tokens
/// keep their base order below the scored ones; a query without
/// in-vocabulary tokens returns `base` unchanged.
RankedList rerank(const RankerParams& params, const InvertedIndex& index, const Query& q,
                  const RankedList& base);

/// QL top-`depth` re-scored by the model.
RankedList rerank(const RankerParams& params, const InvertedIndex& index, const Query& q,
                  std::size_t depth, const RankerConfig& config = {});

/// Min-max normalizes both lists per query (constant lists map to 0.5) and
/// ranks by alpha * model + (1 - alpha) * base.
RankedList smooth(const RankedList& model, const RankedList& base, double alpha);

/// Mean NDCG@k of reranked candidate lists; the early-stopping signal.
double rerank_ndcg(const RankerParams& params, const InvertedIndex& index,
                   const std::vector<Query>& queries,
                   const std::map<std::string, RankedList>& candidates, const Qrels& gold,
                   std::size_t k = 10);

/// Aligned text table of mean metrics, one column per result.
std::string format_metrics_table(const std::vector<EvalResult>& results);
void write_metrics(const std::string& table_path, const std::string& jsonl_path,
                   const std::vector<EvalResult>& results);
/// Reads per-query metrics written by write_metrics.
std::vector<EvalResult> read_metrics_jsonl(const std::string& path);

}  // namespace wsrank
