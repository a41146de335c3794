#include "wsrank/corpus.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "wsrank/error.hpp"
#include "wsrank/random.hpp"

namespace wsrank {

std::unordered_set<std::string> default_stopwords() {
  return {"a",    "an",   "and",  "are",  "as",    "at",   "be",   "by",
          "for",  "from", "has",  "he",   "in",    "is",   "it",   "its",
          "of",   "on",   "that", "the",  "to",    "was",  "were", "will",
          "with", "or",   "this", "but",  "not",   "they", "their", "which"};
}

std::vector<std::string> tokenize(std::string_view text,
                                  const TokenizerConfig& config) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (current.empty()) return;
    if (!config.stopwords.contains(current)) out.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      current.push_back(static_cast<char>(c));
    } else if (c >= 'A' && c <= 'Z') {
      current.push_back(static_cast<char>(c - 'A' + 'a'));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

Document make_document(std::string doc_id, std::string text,
                       const TokenizerConfig& config) {
  Document d;
  d.doc_id = std::move(doc_id);
  d.tokens = tokenize(text, config);
  d.text = std::move(text);
  return d;
}

Query make_query(std::string query_id, std::string text,
                 const TokenizerConfig& config) {
  Query q;
  q.query_id = std::move(query_id);
  q.tokens = tokenize(text, config);
  q.text = std::move(text);
  return q;
}

std::optional<TermId> InvertedIndex::term_id(std::string_view term) const {
  auto it = std::lower_bound(terms_.begin(), terms_.end(), term);
  if (it == terms_.end() || *it != term) return std::nullopt;
  return static_cast<TermId>(it - terms_.begin());
}

std::optional<DocIndex> InvertedIndex::doc_index(std::string_view doc_id) const {
  auto it = std::lower_bound(
      docs_.begin(), docs_.end(), doc_id,
      [](const Document& d, std::string_view id) { return d.doc_id < id; });
  if (it == docs_.end() || it->doc_id != doc_id) return std::nullopt;
  return static_cast<DocIndex>(it - docs_.begin());
}

std::uint32_t InvertedIndex::tf(TermId term, DocIndex d) const {
  const auto& terms = doc_terms_[d];
  auto it = std::lower_bound(
      terms.begin(), terms.end(), term,
      [](const DocTerm& dt, TermId t) { return dt.term < t; });
  return (it != terms.end() && it->term == term) ? it->tf : 0;
}

std::uint64_t InvertedIndex::digest() const {
  std::uint64_t h = fnv1a("wsrank-index");
  for (const auto& d : docs_) {
    h = fnv1a(d.doc_id, h);
    h = fnv1a("\x1f", h);
    for (const auto& t : d.tokens) {
      h = fnv1a(t, h);
      h = fnv1a(" ", h);
    }
    h = fnv1a("\x1e", h);
  }
  return h;
}

InvertedIndex build_index(std::vector<Document> docs) {
  std::sort(docs.begin(), docs.end(),
            [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
  for (std::size_t i = 1; i < docs.size(); ++i) {
    if (docs[i].doc_id == docs[i - 1].doc_id) {
      throw Error("duplicate doc_id '" + docs[i].doc_id + "'");
    }
  }

  InvertedIndex index;
  std::vector<std::string> vocab;
  for (const auto& d : docs) vocab.insert(vocab.end(), d.tokens.begin(), d.tokens.end());
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  index.terms_ = std::move(vocab);

  const std::size_t v = index.terms_.size();
  index.postings_.assign(v, {});
  index.cf_.assign(v, 0);
  index.doc_terms_.resize(docs.size());

  for (std::size_t di = 0; di < docs.size(); ++di) {
    std::vector<TermId> ids;
    ids.reserve(docs[di].tokens.size());
    for (const auto& t : docs[di].tokens) ids.push_back(*index.term_id(t));
    std::sort(ids.begin(), ids.end());
    auto& dt = index.doc_terms_[di];
    for (std::size_t i = 0; i < ids.size();) {
      std::size_t j = i;
      while (j < ids.size() && ids[j] == ids[i]) ++j;
      const auto tf = static_cast<std::uint32_t>(j - i);
      dt.push_back({ids[i], tf});
      index.postings_[ids[i]].push_back({static_cast<DocIndex>(di), tf});
      index.cf_[ids[i]] += tf;
      i = j;
    }
    index.total_tokens_ += docs[di].tokens.size();
  }
  index.avg_doc_length_ =
      docs.empty() ? 0.0
                   : static_cast<double>(index.total_tokens_) /
                         static_cast<double>(docs.size());
  index.docs_ = std::move(docs);
  return index;
}

std::vector<TermId> query_term_ids(const InvertedIndex& index, const Query& q) {
  std::vector<TermId> out;
  out.reserve(q.tokens.size());
  for (const auto& t : q.tokens) {
    if (auto id = index.term_id(t)) out.push_back(*id);
  }
  return out;
}

std::optional<std::size_t> EmbeddingTable::find(std::string_view term) const {
  if (lookup_.size() != terms.size()) {
    lookup_.clear();
    for (std::size_t i = 0; i < terms.size(); ++i) lookup_.emplace(terms[i], i);
  }
  auto it = lookup_.find(std::string(term));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingTable::add(std::string term, std::span<const double> vec) {
  if (vec.size() != dim) throw Error("embedding dimension mismatch for '" + term + "'");
  if (find(term)) throw Error("duplicate embedding term '" + term + "'");
  lookup_.emplace(term, terms.size());
  terms.push_back(std::move(term));
  values.insert(values.end(), vec.begin(), vec.end());
}

}  // namespace wsrank
