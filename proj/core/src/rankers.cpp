#include "wsrank/rankers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "wsrank/error.hpp"
#include "wsrank/random.hpp"

namespace wsrank {
namespace {

void require_query(const Query& q) {
  if (q.tokens.empty()) throw Error("query '" + q.query_id + "' has no terms");
}

bool entry_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

struct Scored {
  DocIndex doc;
  double score;
};

// DocIndex order coincides with doc_id order, so ties break on the index.
bool scored_before(const Scored& a, const Scored& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc < b.doc;
}

RankedList top_of(const InvertedIndex& index, std::vector<Scored> scored, std::size_t k,
                  const Query& q, std::string method) {
  k = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                    scored.end(), scored_before);
  RankedList out{q.query_id, std::move(method), {}};
  out.entries.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.entries.push_back({index.doc(scored[i].doc).doc_id, scored[i].score});
  }
  return out;
}

std::vector<Scored> score_collection(const InvertedIndex& index, const Query& q,
                                     RankerMethod method, const RankerConfig& config) {
  std::vector<Scored> scored(index.num_docs());
  for (DocIndex d = 0; d < index.num_docs(); ++d) {
    double s = 0.0;
    switch (method) {
      case RankerMethod::Bm25:
        s = score_bm25(index, q, d, config.bm25.k1, config.bm25.b);
        break;
      case RankerMethod::TfIdf:
        s = score_tfidf(index, q, d);
        break;
      case RankerMethod::QueryLikelihood:
      case RankerMethod::Rm3:
        s = score_ql(index, q, d, config.ql.mu);
        break;
    }
    scored[d] = {d, s};
  }
  return scored;
}

double smoothed_log_prob(const InvertedIndex& index, TermId t, DocIndex d, double mu) {
  const double pc = index.collection_prob(t);
  return std::log((static_cast<double>(index.tf(t, d)) + mu * pc) /
                  (static_cast<double>(index.doc_length(d)) + mu));
}

}  // namespace

RankerMethod parse_ranker_method(std::string_view name) {
  if (name == "bm25") return RankerMethod::Bm25;
  if (name == "tfidf" || name == "tf-idf") return RankerMethod::TfIdf;
  if (name == "ql") return RankerMethod::QueryLikelihood;
  if (name == "ql+rm3" || name == "rm3") return RankerMethod::Rm3;
  throw Error("unknown ranker '" + std::string(name) + "'");
}

std::string_view to_string(RankerMethod method) {
  switch (method) {
    case RankerMethod::Bm25: return "bm25";
    case RankerMethod::TfIdf: return "tfidf";
    case RankerMethod::QueryLikelihood: return "ql";
    case RankerMethod::Rm3: return "ql+rm3";
  }
  return "unknown";
}

void RankerConfig::validate() const {
  if (!(bm25.k1 > 0.0)) throw Error("bm25.k1 must be positive");
  if (!(bm25.b >= 0.0 && bm25.b <= 1.0)) throw Error("bm25.b must lie in [0, 1]");
  if (!(ql.mu > 0.0)) throw Error("ql.mu must be positive");
  if (!(rm3.orig_weight >= 0.0 && rm3.orig_weight <= 1.0)) {
    throw Error("rm3.orig_weight must lie in [0, 1]");
  }
  if (rm3.fb_docs == 0 || rm3.fb_terms == 0 || rm3.depth == 0) {
    throw Error("rm3.fb_docs, rm3.fb_terms and rm3.depth must be positive");
  }
}

void sort_entries(std::vector<RankedEntry>& entries) {
  std::sort(entries.begin(), entries.end(), entry_before);
}

double score_ql(const InvertedIndex& index, const Query& q, DocIndex d, double mu) {
  require_query(q);
  if (!(mu > 0.0)) throw Error("ql.mu must be positive");
  double s = 0.0;
  for (TermId t : query_term_ids(index, q)) s += smoothed_log_prob(index, t, d, mu);
  return s;
}

double score_bm25(const InvertedIndex& index, const Query& q, DocIndex d, double k1,
                  double b) {
  require_query(q);
  const double n = static_cast<double>(index.num_docs());
  const double norm =
      index.avg_doc_length() > 0.0
          ? 1.0 - b + b * static_cast<double>(index.doc_length(d)) / index.avg_doc_length()
          : 1.0;
  double s = 0.0;
  for (TermId t : query_term_ids(index, q)) {
    const double tf = index.tf(t, d);
    if (tf == 0.0) continue;
    const double df = index.doc_freq(t);
    const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
    s += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
  }
  return s;
}

double score_tfidf(const InvertedIndex& index, const Query& q, DocIndex d) {
  require_query(q);
  const double n = static_cast<double>(index.num_docs());
  double s = 0.0;
  for (TermId t : query_term_ids(index, q)) {
    const double tf = index.tf(t, d);
    if (tf == 0.0) continue;
    s += tf * std::log(n / static_cast<double>(index.doc_freq(t)));
  }
  return s;
}

std::vector<WeightedTerm> relevance_model(const InvertedIndex& index,
                                          const RankedList& base, const QlParams& ql,
                                          const Rm3Params& rm3) {
  const std::size_t n_fb = std::min(rm3.fb_docs, base.entries.size());
  if (n_fb == 0) return {};
  std::vector<DocIndex> fb;
  std::vector<double> doc_weight;
  const double top = base.entries.front().score;
  double total = 0.0;
  for (std::size_t i = 0; i < n_fb; ++i) {
    auto d = index.doc_index(base.entries[i].doc_id);
    if (!d) throw Error("feedback document '" + base.entries[i].doc_id + "' not in index");
    fb.push_back(*d);
    // Query likelihoods, normalized over the feedback set.
    doc_weight.push_back(std::exp(base.entries[i].score - top));
    total += doc_weight.back();
  }
  for (double& w : doc_weight) w /= total;

  const std::size_t v = index.vocab_size();
  std::vector<double> model(v, 0.0);
  for (std::size_t i = 0; i < fb.size(); ++i) {
    const double len = index.doc_length(fb[i]);
    const double denom = len + ql.mu;
    const double scale = doc_weight[i] / denom;
    for (TermId t = 0; t < v; ++t) model[t] += scale * ql.mu * index.collection_prob(t);
    for (const DocTerm& dt : index.doc_terms(fb[i])) model[dt.term] += scale * dt.tf;
  }

  std::vector<WeightedTerm> terms(v);
  for (TermId t = 0; t < v; ++t) terms[t] = {t, model[t]};
  const std::size_t keep = std::min(rm3.fb_terms, terms.size());
  std::partial_sort(terms.begin(), terms.begin() + static_cast<std::ptrdiff_t>(keep),
                    terms.end(), [](const WeightedTerm& a, const WeightedTerm& b) {
                      if (a.weight != b.weight) return a.weight > b.weight;
                      return a.term < b.term;
                    });
  terms.resize(keep);
  double mass = 0.0;
  for (const auto& wt : terms) mass += wt.weight;
  for (auto& wt : terms) wt.weight /= mass;
  return terms;
}

std::vector<WeightedTerm> expand_query(const InvertedIndex& index, const Query& q,
                                       const RankedList& base, const QlParams& ql,
                                       const Rm3Params& rm3) {
  std::map<TermId, double> mix;
  const auto ids = query_term_ids(index, q);
  for (TermId t : ids) {
    mix[t] += rm3.orig_weight / static_cast<double>(ids.size());
  }
  if (rm3.orig_weight < 1.0) {
    for (const auto& wt : relevance_model(index, base, ql, rm3)) {
      mix[wt.term] += (1.0 - rm3.orig_weight) * wt.weight;
    }
  }
  std::vector<WeightedTerm> out;
  for (const auto& [t, w] : mix) {
    if (w > 0.0) out.push_back({t, w});
  }
  return out;
}

double score_weighted_ql(const InvertedIndex& index,
                         const std::vector<WeightedTerm>& query_model, DocIndex d,
                         double mu) {
  double s = 0.0;
  for (const auto& wt : query_model) s += wt.weight * smoothed_log_prob(index, wt.term, d, mu);
  return s;
}

RankedList rm3_rerank(const InvertedIndex& index, const Query& q, const RankedList& base,
                      const RankerConfig& config) {
  if (base.entries.empty()) return base;
  const auto expanded = expand_query(index, q, base, config.ql, config.rm3);
  RankedList out{base.query_id, std::string(to_string(RankerMethod::Rm3)), {}};
  out.entries.reserve(base.entries.size());
  for (const auto& e : base.entries) {
    auto d = index.doc_index(e.doc_id);
    if (!d) throw Error("document '" + e.doc_id + "' not in index");
    out.entries.push_back({e.doc_id, score_weighted_ql(index, expanded, *d, config.ql.mu)});
  }
  sort_entries(out.entries);
  return out;
}

RankedList retrieve_topk(const InvertedIndex& index, const Query& q, std::size_t k,
                         RankerMethod method, const RankerConfig& config) {
  if (k == 0) throw Error("retrieve_topk requires k >= 1");
  require_query(q);
  if (method == RankerMethod::Rm3) {
    auto base = retrieve_topk(index, q, std::max(k, config.rm3.depth),
                              RankerMethod::QueryLikelihood, config);
    auto out = rm3_rerank(index, q, base, config);
    if (out.entries.size() > k) out.entries.resize(k);
    return out;
  }
  return top_of(index, score_collection(index, q, method, config), k, q,
                std::string(to_string(method)));
}

std::string NoisyRanker::name() const {
  std::ostringstream s;
  s << to_string(method_) << "+noise(" << noise_sd_ << ")";
  return s.str();
}

RankedList NoisyRanker::retrieve(const Query& q, std::size_t k) const {
  if (k == 0) throw Error("retrieve requires k >= 1");
  require_query(q);
  const std::uint64_t qseed = child_seed(seed_, q.query_id);
  auto noise = [&](const std::string& doc_id) {
    return noise_sd_ * hash_normal(child_seed(qseed, doc_id));
  };
  if (method_ == RankerMethod::Rm3) {
    auto list = retrieve_topk(index_, q, std::max(k, config_.rm3.depth), method_, config_);
    for (auto& e : list.entries) e.score += noise(e.doc_id);
    sort_entries(list.entries);
    if (list.entries.size() > k) list.entries.resize(k);
    list.method = name();
    return list;
  }
  auto scored = score_collection(index_, q, method_, config_);
  for (auto& s : scored) s.score += noise(index_.doc(s.doc).doc_id);
  return top_of(index_, std::move(scored), k, q, name());
}

void write_trec_run(std::ostream& out, const RankedList& list, std::string_view tag) {
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    out << list.query_id << " Q0 " << list.entries[i].doc_id << ' ' << (i + 1) << ' '
        << std::setprecision(10) << list.entries[i].score << ' ' << tag << '\n';
  }
}

void write_trec_run(const std::string& path, const std::vector<RankedList>& lists,
                    std::string_view tag) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  for (const auto& l : lists) write_trec_run(out, l, tag);
}

std::map<std::string, RankedList> read_trec_run(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  std::map<std::string, RankedList> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string qid, q0, docid, tag;
    long rank = 0;
    double score = 0.0;
    if (!(fields >> qid)) continue;
    if (!(fields >> q0 >> docid >> rank >> score >> tag)) {
      throw ParseError(path, lineno, "expected 'qid Q0 docid rank score tag'");
    }
    auto& list = out[qid];
    list.query_id = qid;
    list.method = tag;
    list.entries.push_back({docid, score});
  }
  return out;
}

}  // namespace wsrank
