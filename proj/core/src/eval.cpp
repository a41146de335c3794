#include "wsrank/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "wsrank/error.hpp"

namespace wsrank {
namespace {

double gain_of(int grade, Gain gain) {
  if (grade <= 0) return 0.0;
  return gain == Gain::Linear ? grade : std::exp2(grade) - 1.0;
}

int grade_of(const Grades& gold, const std::string& doc) {
  auto it = gold.find(doc);
  return it == gold.end() ? 0 : it->second;
}

std::size_t relevant_count(const Grades& gold) {
  return static_cast<std::size_t>(
      std::count_if(gold.begin(), gold.end(), [](const auto& kv) { return kv.second > 0; }));
}

}  // namespace

std::optional<double> ndcg_at_k(const std::vector<std::string>& ranking, const Grades& gold,
                                std::size_t k, Gain gain) {
  if (k == 0) throw Error("ndcg_at_k requires k >= 1");
  std::vector<int> grades;
  for (const auto& [doc, g] : gold) {
    if (g > 0) grades.push_back(g);
  }
  if (grades.empty()) return std::nullopt;
  std::sort(grades.rbegin(), grades.rend());
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, grades.size()); ++r) {
    ideal += gain_of(grades[r], gain) / std::log2(static_cast<double>(r) + 2.0);
  }
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
    dcg += gain_of(grade_of(gold, ranking[r]), gain) / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / ideal;
}

double prec_at_k(const std::vector<std::string>& ranking, const Grades& gold, std::size_t k) {
  if (k == 0) throw Error("prec_at_k requires k >= 1");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
    if (grade_of(gold, ranking[r]) > 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

std::optional<double> average_precision(const std::vector<std::string>& ranking,
                                        const Grades& gold) {
  const std::size_t total = relevant_count(gold);
  if (total == 0) return std::nullopt;
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    if (grade_of(gold, ranking[r]) > 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(total);
}

std::vector<std::string> doc_ids(const RankedList& list) {
  std::vector<std::string> out;
  out.reserve(list.entries.size());
  for (const auto& e : list.entries) out.push_back(e.doc_id);
  return out;
}

EvalResult evaluate_run(const std::string& tag, const std::map<std::string, RankedList>& run,
                        const std::vector<std::string>& query_ids, const Qrels& gold,
                        std::size_t k, Gain gain) {
  EvalResult res;
  res.tag = tag;
  res.k = k;
  std::vector<std::string> ids = query_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  static const Grades kEmpty;
  for (const auto& qid : ids) {
    auto g = gold.find(qid);
    const Grades& grades = g == gold.end() ? kEmpty : g->second;
    if (relevant_count(grades) == 0) continue;
    auto r = run.find(qid);
    const std::vector<std::string> ranking =
        r == run.end() ? std::vector<std::string>{} : doc_ids(r->second);
    res.per_query.push_back({qid, *ndcg_at_k(ranking, grades, k, gain),
                             prec_at_k(ranking, grades, k), *average_precision(ranking, grades)});
  }
  for (const auto& m : res.per_query) {
    res.mean_ndcg += m.ndcg;
    res.mean_precision += m.precision;
    res.mean_ap += m.average_precision;
  }
  if (!res.per_query.empty()) {
    const double n = static_cast<double>(res.per_query.size());
    res.mean_ndcg /= n;
    res.mean_precision /= n;
    res.mean_ap /= n;
  }
  return res;
}

RankedList rerank(const RankerParams& params, const InvertedIndex& index, const Query& q,
                  const RankedList& base) {
  const TokenIds qids = params.encode(q.tokens);
  if (qids.empty()) {
    spdlog::warn("query '{}' has no in-vocabulary tokens; keeping the base order", q.query_id);
    return base;
  }
  const Eigen::VectorXd vq = pool(params, qids);
  RankedList out{base.query_id, "model", {}};
  std::vector<RankedEntry> unscored;
  for (const auto& e : base.entries) {
    auto d = index.doc_index(e.doc_id);
    if (!d) throw Error("document '" + e.doc_id + "' not in index");
    const TokenIds dids = params.encode(index.doc(*d).tokens);
    if (dids.empty()) {
      unscored.push_back(e);
      continue;
    }
    const Eigen::VectorXd x = features(vq, pool(params, dids));
    // Same network as forward(), without re-pooling the query per document.
    Eigen::VectorXd h = x;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      Eigen::VectorXd z = params.layers[i].weight * h + params.layers[i].bias;
      h = (i + 1 < params.layers.size()) ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
    }
    const double s = params.output_mode == OutputMode::Tanh ? std::tanh(h[0]) : h[0];
    out.entries.push_back({e.doc_id, s});
  }
  sort_entries(out.entries);
  if (!unscored.empty()) {
    const double floor = out.entries.empty() ? 0.0 : out.entries.back().score;
    for (auto& e : unscored) out.entries.push_back({e.doc_id, floor});
  }
  return out;
}

RankedList rerank(const RankerParams& params, const InvertedIndex& index, const Query& q,
                  std::size_t depth, const RankerConfig& config) {
  return rerank(params, index, q,
                retrieve_topk(index, q, depth, RankerMethod::QueryLikelihood, config));
}

RankedList smooth(const RankedList& model, const RankedList& base, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("smoothing weight must lie in [0, 1]");
  if (model.entries.size() != base.entries.size()) {
    throw Error("smooth: lists for query '" + model.query_id + "' differ in size");
  }
  auto normalized = [](const RankedList& l) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& e : l.entries) {
      lo = std::min(lo, e.score);
      hi = std::max(hi, e.score);
    }
    std::map<std::string, double> out;
    for (const auto& e : l.entries) {
      out[e.doc_id] = (hi > lo && std::isfinite(hi - lo)) ? (e.score - lo) / (hi - lo) : 0.5;
    }
    return out;
  };
  const auto m = normalized(model);
  const auto b = normalized(base);
  RankedList out{model.query_id, "smoothed", {}};
  for (const auto& [doc, ms] : m) {
    auto it = b.find(doc);
    if (it == b.end()) throw Error("smooth: document '" + doc + "' missing from base list");
    out.entries.push_back({doc, alpha * ms + (1.0 - alpha) * it->second});
  }
  sort_entries(out.entries);
  return out;
}

double rerank_ndcg(const RankerParams& params, const InvertedIndex& index,
                   const std::vector<Query>& queries,
                   const std::map<std::string, RankedList>& candidates, const Qrels& gold,
                   std::size_t k) {
  std::map<std::string, RankedList> run;
  std::vector<std::string> ids;
  for (const auto& q : queries) {
    auto c = candidates.find(q.query_id);
    if (c == candidates.end()) continue;
    run[q.query_id] = rerank(params, index, q, c->second);
    ids.push_back(q.query_id);
  }
  return evaluate_run("dev", run, ids, gold, k).mean_ndcg;
}

std::string format_metrics_table(const std::vector<EvalResult>& results) {
  std::ostringstream out;
  std::size_t width = 8;
  for (const auto& r : results) width = std::max(width, r.tag.size());
  const std::string k = results.empty() ? "10" : std::to_string(results.front().k);
  out << std::left << std::setw(10) << "metric";
  for (const auto& r : results) out << " | " << std::right << std::setw(static_cast<int>(width)) << r.tag;
  out << '\n';
  auto row = [&](const std::string& name, auto getter) {
    out << std::left << std::setw(10) << name;
    for (const auto& r : results) {
      out << " | " << std::right << std::setw(static_cast<int>(width)) << std::fixed
          << std::setprecision(4) << getter(r);
    }
    out << '\n';
  };
  row("NDCG@" + k, [](const EvalResult& r) { return r.mean_ndcg; });
  row("Prec@" + k, [](const EvalResult& r) { return r.mean_precision; });
  row("MAP", [](const EvalResult& r) { return r.mean_ap; });
  out << std::left << std::setw(10) << "queries";
  for (const auto& r : results) {
    out << " | " << std::right << std::setw(static_cast<int>(width)) << r.query_count();
  }
  out << '\n';
  return out.str();
}

void write_metrics(const std::string& table_path, const std::string& jsonl_path,
                   const std::vector<EvalResult>& results) {
  {
    std::ofstream out(table_path, std::ios::binary);
    if (!out) throw Error(table_path + ": cannot open file for writing");
    out << format_metrics_table(results);
  }
  std::ofstream out(jsonl_path, std::ios::binary);
  if (!out) throw Error(jsonl_path + ": cannot open file for writing");
  for (const auto& r : results) {
    for (const auto& m : r.per_query) {
      out << nlohmann::json{{"run", r.tag},          {"query_id", m.query_id},
                            {"k", r.k},              {"ndcg", m.ndcg},
                            {"precision", m.precision}, {"ap", m.average_precision}}
                 .dump()
          << '\n';
    }
  }
}

std::vector<EvalResult> read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  std::vector<EvalResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto tag = j.at("run").get<std::string>();
      if (out.empty() || out.back().tag != tag) {
        out.push_back({});
        out.back().tag = tag;
        out.back().k = j.at("k").get<std::size_t>();
      }
      out.back().per_query.push_back({j.at("query_id").get<std::string>(),
                                      j.at("ndcg").get<double>(),
                                      j.at("precision").get<double>(), j.at("ap").get<double>()});
    } catch (const std::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  for (auto& r : out) {
    for (const auto& m : r.per_query) {
      r.mean_ndcg += m.ndcg;
      r.mean_precision += m.precision;
      r.mean_ap += m.average_precision;
    }
    const double n = static_cast<double>(std::max<std::size_t>(r.per_query.size(), 1));
    r.mean_ndcg /= n;
    r.mean_precision /= n;
    r.mean_ap /= n;
  }
  return out;
}

}  // namespace wsrank
