#include "wsrank/weakgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "wsrank/error.hpp"
#include "wsrank/random.hpp"

namespace wsrank {

using nlohmann::json;

std::string_view to_string(Provenance p) {
  return p == Provenance::BothTop10 ? "both-top10" : "negative-sampled";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "both-top10") return Provenance::BothTop10;
  if (s == "negative-sampled") return Provenance::NegativeSampled;
  throw Error("unknown provenance '" + std::string(s) + "'");
}

std::optional<double> hard_label(const TrainPair& pair) {
  if (pair.s1 == pair.s2) return std::nullopt;
  return pair.s1 > pair.s2 ? 1.0 : 0.0;
}

WeakDataset generate_dataset(const InvertedIndex& index, const std::vector<Query>& queries,
                             const Ranker& weak_ranker, const WeakGenOptions& options) {
  if (queries.empty()) throw Error("generate_dataset requires at least one query");
  if (options.depth == 0) throw Error("generate_dataset requires depth >= 1");

  std::vector<std::size_t> chosen(queries.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
  if (chosen.size() > options.num_rankings) {
    Rng rng(child_seed(options.seed, "rankings"));
    rng.shuffle(chosen);
    chosen.resize(options.num_rankings);
    std::sort(chosen.begin(), chosen.end());
  }

  WeakDataset out;
  std::vector<DocIndex> pool;
  for (std::size_t qi : chosen) {
    const Query& q = queries[qi];
    if (q.tokens.empty()) {
      spdlog::warn("query '{}' has no terms; skipped", q.query_id);
      ++out.skipped_queries;
      continue;
    }
    const RankedList top = weak_ranker.retrieve(q, options.depth);
    if (top.entries.empty()) {
      spdlog::warn("query '{}' retrieved no documents; skipped", q.query_id);
      ++out.skipped_queries;
      continue;
    }
    const std::size_t before = out.pairs.size();
    for (std::size_t i = 0; i < top.entries.size(); ++i) {
      for (std::size_t j = i + 1; j < top.entries.size(); ++j) {
        const auto& a = top.entries[i];
        const auto& b = top.entries[j];
        if (a.score == b.score) continue;
        out.pairs.push_back({q.query_id, a.doc_id, b.doc_id, a.score, b.score,
                             Provenance::BothTop10});
      }
    }

    if (options.n_neg > 0) {
      pool.clear();
      std::vector<DocIndex> retrieved;
      for (const auto& e : top.entries) {
        if (auto d = index.doc_index(e.doc_id)) retrieved.push_back(*d);
      }
      std::sort(retrieved.begin(), retrieved.end());
      for (DocIndex d = 0; d < index.num_docs(); ++d) {
        if (!std::binary_search(retrieved.begin(), retrieved.end(), d)) pool.push_back(d);
      }
      Rng rng(child_seed(options.seed, q.query_id));
      const std::size_t wanted = std::min(options.n_neg * top.entries.size(), pool.size());
      // Partial Fisher-Yates: the first `wanted` slots are a sample without
      // replacement.
      for (std::size_t i = 0; i < wanted; ++i) {
        std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
      }
      std::size_t next = 0;
      for (const auto& e : top.entries) {
        for (std::size_t n = 0; n < options.n_neg && next < wanted; ++n, ++next) {
          out.pairs.push_back({q.query_id, e.doc_id, index.doc(pool[next]).doc_id, e.score,
                               kNegativeScore, Provenance::NegativeSampled});
        }
      }
    }
    if (out.pairs.size() > before) out.query_ids.push_back(q.query_id);
  }
  return out;
}

std::int8_t pair_vote(const RankedList& ranking, const std::string& d1,
                      const std::string& d2, std::size_t depth) {
  const std::size_t n = std::min(depth, ranking.entries.size());
  std::size_t p1 = n;
  std::size_t p2 = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranking.entries[i].doc_id == d1) p1 = i;
    if (ranking.entries[i].doc_id == d2) p2 = i;
  }
  if (p1 == n && p2 == n) return 0;
  return p1 < p2 ? 1 : -1;
}

LabelMatrix build_label_matrix(const std::vector<TrainPair>& pairs,
                               const std::vector<std::string>& ranker_tags,
                               const std::vector<RankingsByQuery>& rankings,
                               std::size_t depth) {
  if (ranker_tags.size() != rankings.size()) {
    throw Error("build_label_matrix: ranker tag count does not match rankings");
  }
  LabelMatrix m;
  m.ranker_tags = ranker_tags;
  m.rows = pairs.size();
  m.values.resize(m.rows * m.cols());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (std::size_t j = 0; j < rankings.size(); ++j) {
      auto it = rankings[j].find(pairs[i].query_id);
      if (it == rankings[j].end()) {
        throw Error("ranker '" + ranker_tags[j] + "' has no ranking for query '" +
                    pairs[i].query_id + "'");
      }
      m.values[i * m.cols() + j] = pair_vote(it->second, pairs[i].d1, pairs[i].d2, depth);
    }
  }
  return m;
}

namespace {

json score_json(double s) { return std::isfinite(s) ? json(s) : json(nullptr); }

double score_from(const json& j) {
  return j.is_null() ? kNegativeScore : j.get<double>();
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<TrainPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  for (const auto& p : pairs) {
    out << json{{"query_id", p.query_id},     {"d1", p.d1},
                {"d2", p.d2},                 {"s1", score_json(p.s1)},
                {"s2", score_json(p.s2)},     {"provenance", to_string(p.provenance)}}
               .dump()
        << '\n';
  }
}

std::vector<TrainPair> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  std::vector<TrainPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("query_id").get<std::string>(), j.at("d1").get<std::string>(),
                     j.at("d2").get<std::string>(), score_from(j.at("s1")),
                     score_from(j.at("s2")),
                     parse_provenance(j.at("provenance").get<std::string>())});
    } catch (const std::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  return out;
}

void write_label_matrix(const std::string& path, const LabelMatrix& matrix) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << json{{"ranker_tags", matrix.ranker_tags}}.dump() << '\n';
  for (std::size_t i = 0; i < matrix.rows; ++i) {
    json votes = json::array();
    for (auto v : matrix.row(i)) votes.push_back(static_cast<int>(v));
    out << json{{"pair", i}, {"votes", votes}}.dump() << '\n';
  }
}

LabelMatrix read_label_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  LabelMatrix m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (lineno == 1) {
        m.ranker_tags = j.at("ranker_tags").get<std::vector<std::string>>();
        continue;
      }
      if (j.at("pair").get<std::size_t>() != m.rows) throw Error("pair index out of order");
      const auto votes = j.at("votes").get<std::vector<int>>();
      if (votes.size() != m.cols()) throw Error("row width differs from ranker count");
      for (int v : votes) {
        if (v < -1 || v > 1) throw Error("vote outside {-1, 0, 1}");
        m.values.push_back(static_cast<std::int8_t>(v));
      }
      ++m.rows;
    } catch (const std::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  return m;
}

}  // namespace wsrank
