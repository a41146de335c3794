#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

namespace wsrank {

using TermId = std::uint32_t;
using DocIndex = std::uint32_t;

struct TokenizerConfig {
  std::unordered_set<std::string> stopwords;
};

/// A small English stopword list for callers that want stopping.
std::unordered_set<std::string> default_stopwords();

/// Lowercases ASCII letters and splits on runs of non-alphanumeric bytes.
std::vector<std::string> tokenize(std::string_view text,
                                  const TokenizerConfig& config = {});

struct Document {
  std::string doc_id;
  std::string text;
  std::vector<std::string> tokens;

  std::size_t length() const { return tokens.size(); }
};

struct Query {
  std::string query_id;
  std::string text;
  std::vector<std::string> tokens;
};

Document make_document(std::string doc_id, std::string text,
                       const TokenizerConfig& config = {});
Query make_query(std::string query_id, std::string text,
                 const TokenizerConfig& config = {});

/// query_id -> doc_id -> graded relevance (>= 0).
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct Posting {
  DocIndex doc;
  std::uint32_t tf;

  friend bool operator==(const Posting&, const Posting&) = default;
};

struct DocTerm {
  TermId term;
  std::uint32_t tf;

  friend bool operator==(const DocTerm&, const DocTerm&) = default;
};

/// Immutable inverted index. Documents are stored sorted by doc_id and terms
/// by lexicographic order, so the index does not depend on insertion order.
class InvertedIndex {
 public:
  InvertedIndex() = default;

  std::size_t num_docs() const { return docs_.size(); }
  std::size_t vocab_size() const { return terms_.size(); }
  std::uint64_t total_tokens() const { return total_tokens_; }
  /// 0 for an empty corpus.
  double avg_doc_length() const { return avg_doc_length_; }

  std::optional<TermId> term_id(std::string_view term) const;
  const std::string& term(TermId id) const { return terms_[id]; }
  const std::vector<std::string>& terms() const { return terms_; }

  std::uint32_t doc_freq(TermId id) const {
    return static_cast<std::uint32_t>(postings_[id].size());
  }
  std::uint64_t collection_term_freq(TermId id) const { return cf_[id]; }
  std::span<const Posting> postings(TermId id) const { return postings_[id]; }

  /// Probability of the term in the collection language model.
  double collection_prob(TermId id) const {
    return total_tokens_ == 0 ? 0.0
                              : static_cast<double>(cf_[id]) /
                                    static_cast<double>(total_tokens_);
  }

  std::optional<DocIndex> doc_index(std::string_view doc_id) const;
  const Document& doc(DocIndex d) const { return docs_[d]; }
  const std::vector<Document>& documents() const { return docs_; }
  std::uint32_t doc_length(DocIndex d) const {
    return static_cast<std::uint32_t>(docs_[d].tokens.size());
  }
  /// Distinct terms of a document with their frequencies, sorted by term id.
  std::span<const DocTerm> doc_terms(DocIndex d) const { return doc_terms_[d]; }
  std::uint32_t tf(TermId term, DocIndex d) const;

  /// Stable digest over documents and statistics.
  std::uint64_t digest() const;

  friend InvertedIndex build_index(std::vector<Document> docs);

 private:
  std::vector<Document> docs_;
  std::vector<std::string> terms_;
  std::vector<std::vector<Posting>> postings_;
  std::vector<std::uint64_t> cf_;
  std::vector<std::vector<DocTerm>> doc_terms_;
  std::uint64_t total_tokens_ = 0;
  double avg_doc_length_ = 0.0;
};

/// Throws wsrank::Error naming the id on duplicate doc_ids.
InvertedIndex build_index(std::vector<Document> docs);

/// Term ids of a query that occur in the collection, in query order (with
/// repeats). Terms unseen in the collection are dropped.
std::vector<TermId> query_term_ids(const InvertedIndex& index, const Query& q);

// ---------------------------------------------------------------------------
// Ingestion

enum class IngestFormat { TrecText, JsonLines, Qrels, Topics, EmbeddingText };

/// Parses a format tag: trec-text, json-lines, qrels, topics, embedding-text.
IngestFormat parse_ingest_format(std::string_view tag);
std::string_view to_string(IngestFormat format);

struct IngestIssue {
  std::size_t line;
  std::string message;
};

/// Line accounting for a parse. In lenient mode malformed records end up in
/// `issues` instead of raising.
struct IngestReport {
  std::size_t lines = 0;
  std::size_t records = 0;
  std::vector<IngestIssue> issues;
};

struct IngestOptions {
  bool strict = true;
  /// 0 takes the dimension from the first vector line.
  std::size_t embedding_dim = 0;
  TokenizerConfig tokenizer;
};

struct QrelsEntry {
  std::string query_id;
  std::string doc_id;
  int grade;
};

/// Dense word-vector table loaded from text (`term v1 ... vD` per line).
struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<std::string> terms;
  std::vector<double> values;  // row-major, terms.size() x dim

  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * dim, dim};
  }
  std::optional<std::size_t> find(std::string_view term) const;
  void add(std::string term, std::span<const double> vec);

 private:
  mutable std::unordered_map<std::string, std::size_t> lookup_;
};

std::vector<Document> read_trec_text(const std::string& path,
                                     const IngestOptions& options = {},
                                     IngestReport* report = nullptr);
/// Records `{"id": ..., "text": ...}`, one per line.
std::vector<Document> read_jsonl_documents(const std::string& path,
                                           const IngestOptions& options = {},
                                           IngestReport* report = nullptr);
std::vector<Query> read_jsonl_queries(const std::string& path,
                                      const IngestOptions& options = {},
                                      IngestReport* report = nullptr);
/// TREC topic files; the title field becomes the query text.
std::vector<Query> read_topics(const std::string& path,
                               const IngestOptions& options = {},
                               IngestReport* report = nullptr);
std::vector<QrelsEntry> read_qrels(const std::string& path,
                                   const IngestOptions& options = {},
                                   IngestReport* report = nullptr);
Qrels to_qrels(const std::vector<QrelsEntry>& entries);
EmbeddingTable read_embeddings(const std::string& path,
                               const IngestOptions& options,
                               IngestReport* report = nullptr);

using IngestResult = std::variant<std::vector<Document>, std::vector<Query>,
                                  std::vector<QrelsEntry>, EmbeddingTable>;

/// Dispatches on the format tag. json-lines yields documents.
IngestResult ingest(const std::string& path, IngestFormat format,
                    const IngestOptions& options = {},
                    IngestReport* report = nullptr);

void write_jsonl_documents(const std::string& path,
                           const std::vector<Document>& docs);
void write_jsonl_queries(const std::string& path,
                         const std::vector<Query>& queries);
void write_qrels(const std::string& path, const Qrels& qrels);
void write_embeddings(const std::string& path, const EmbeddingTable& table);

// ---------------------------------------------------------------------------
// Synthetic worlds

struct SyntheticParams {
  std::size_t num_docs = 5000;
  /// Judged queries (dev + eval).
  std::size_t num_queries = 60;
  /// Unjudged queries used only to generate weak training data.
  std::size_t num_train_queries = 200;
  std::size_t vocab_size = 4000;
  /// Probability that a judged document's text is drawn from the profile of
  /// a different grade than the one it is judged at.
  double relevance_noise = 0.1;
  std::uint64_t seed = 1;

  /// 0 picks max(4, num_queries / 5).
  std::size_t num_topics = 0;
  std::size_t terms_per_topic = 20;
  std::size_t relevant_per_topic = 30;
  std::size_t mean_doc_length = 80;
  std::size_t embedding_dim = 32;
};

struct SyntheticWorld {
  SyntheticParams params;
  std::vector<Document> docs;
  std::vector<Query> queries;
  std::vector<Query> train_queries;
  Qrels gold;
  /// Topic-structured word vectors standing in for a pretrained table.
  EmbeddingTable embeddings;
  /// Topic of each judged query, parallel to `queries`.
  std::vector<std::size_t> query_topics;
  /// Topical terms of each topic.
  std::vector<std::vector<std::string>> topic_terms;
};

/// Deterministic in `params`; throws wsrank::Error on out-of-range params.
SyntheticWorld generate_synthetic(const SyntheticParams& params);

}  // namespace wsrank
