#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsrank/corpus.hpp"
#include "wsrank/rankers.hpp"

namespace wsrank {

enum class Provenance { BothTop10, NegativeSampled };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view s);

/// Score carried by a sampled negative; below every retrieved score.
inline constexpr double kNegativeScore = -std::numeric_limits<double>::infinity();

/// One weak training tuple. d1 is always the weak ranker's preferred document.
struct TrainPair {
  std::string query_id;
  std::string d1;
  std::string d2;
  double s1 = 0.0;
  double s2 = 0.0;
  Provenance provenance = Provenance::BothTop10;

  friend bool operator==(const TrainPair&, const TrainPair&) = default;
};

/// sign(s1 - s2) as a {0, 1} target; nullopt for tied scores.
std::optional<double> hard_label(const TrainPair& pair);

struct WeakGenOptions {
  std::size_t depth = 10;
  std::size_t n_neg = 1;
  std::size_t num_rankings = 100000;
  std::uint64_t seed = 1;
};

struct WeakDataset {
  std::vector<TrainPair> pairs;
  /// Queries that produced at least one pair, in generation order.
  std::vector<std::string> query_ids;
  std::size_t skipped_queries = 0;
};

/// Builds weak pairs from the top `depth` of each query plus sampled negatives.
/// Queries are sampled down to `num_rankings` and the RNG is split per query.
WeakDataset generate_dataset(const InvertedIndex& index, const std::vector<Query>& queries,
                             const Ranker& weak_ranker, const WeakGenOptions& options);

/// m x k votes in {-1, 0, +1}; column j belongs to ranker_tags[j].
struct LabelMatrix {
  std::vector<std::string> ranker_tags;
  std::size_t rows = 0;
  std::vector<std::int8_t> values;  // row-major

  std::size_t cols() const { return ranker_tags.size(); }
  std::int8_t at(std::size_t i, std::size_t j) const { return values[i * cols() + j]; }
  std::span<const std::int8_t> row(std::size_t i) const {
    return {values.data() + i * cols(), cols()};
  }
};

/// One ranker's truncated lists, keyed by query_id.
using RankingsByQuery = std::map<std::string, RankedList>;

/// Vote of a single truncated ranking on the ordered pair (d1, d2): +1 when d1
/// is placed above d2 (or only d1 is present), -1 for the reverse, 0 when
/// neither appears.
std::int8_t pair_vote(const RankedList& ranking, const std::string& d1,
                      const std::string& d2, std::size_t depth = 10);

/// Throws when a pair's query is missing from some ranker's output.
LabelMatrix build_label_matrix(const std::vector<TrainPair>& pairs,
                               const std::vector<std::string>& ranker_tags,
                               const std::vector<RankingsByQuery>& rankings,
                               std::size_t depth = 10);

void write_dataset(const std::string& path, const std::vector<TrainPair>& pairs);
std::vector<TrainPair> read_dataset(const std::string& path);
void write_label_matrix(const std::string& path, const LabelMatrix& matrix);
LabelMatrix read_label_matrix(const std::string& path);

}  // namespace wsrank
