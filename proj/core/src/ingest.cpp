#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "wsrank/corpus.hpp"
#include "wsrank/error.hpp"

namespace wsrank {
namespace {

using nlohmann::json;

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  return out;
}

/// Records a malformed line; raises in strict mode.
class IssueSink {
 public:
  IssueSink(const std::string& path, const IngestOptions& options,
            IngestReport& report)
      : path_(path), strict_(options.strict), report_(report) {}

  void operator()(std::size_t line, std::string message) {
    if (strict_) throw ParseError(path_, line, message);
    report_.issues.push_back({line, std::move(message)});
  }

 private:
  const std::string& path_;
  bool strict_;
  IngestReport& report_;
};

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string strip_tags(std::string_view s) {
  std::string out;
  bool in_tag = false;
  for (char c : s) {
    if (c == '<') {
      in_tag = true;
      out.push_back(' ');
    } else if (c == '>' && in_tag) {
      in_tag = false;
    } else if (!in_tag) {
      out.push_back(c);
    }
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_int(std::string_view s, int& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

template <typename Record, typename Make>
std::vector<Record> read_jsonl(const std::string& path, const IngestOptions& options,
                               IngestReport* report, Make make) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  IssueSink issue(path, options, rep);
  auto in = open_input(path);
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    ++rep.lines;
    if (is_blank(line)) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      issue(lineno, "invalid JSON object");
      continue;
    }
    auto id = j.find("id");
    auto text = j.find("text");
    if (id == j.end() || text == j.end() || !text->is_string() ||
        !(id->is_string() || id->is_number_integer())) {
      issue(lineno, "record requires string fields 'id' and 'text'");
      continue;
    }
    std::string id_str = id->is_string() ? id->get<std::string>()
                                         : std::to_string(id->get<long long>());
    out.push_back(make(std::move(id_str), text->get<std::string>()));
    ++rep.records;
  }
  return out;
}

}  // namespace

IngestFormat parse_ingest_format(std::string_view tag) {
  if (tag == "trec-text") return IngestFormat::TrecText;
  if (tag == "json-lines") return IngestFormat::JsonLines;
  if (tag == "qrels") return IngestFormat::Qrels;
  if (tag == "topics") return IngestFormat::Topics;
  if (tag == "embedding-text") return IngestFormat::EmbeddingText;
  throw Error("unknown ingest format '" + std::string(tag) + "'");
}

std::string_view to_string(IngestFormat format) {
  switch (format) {
    case IngestFormat::TrecText: return "trec-text";
    case IngestFormat::JsonLines: return "json-lines";
    case IngestFormat::Qrels: return "qrels";
    case IngestFormat::Topics: return "topics";
    case IngestFormat::EmbeddingText: return "embedding-text";
  }
  return "unknown";
}

std::vector<Document> read_trec_text(const std::string& path,
                                     const IngestOptions& options,
                                     IngestReport* report) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  IssueSink issue(path, options, rep);
  auto in = open_input(path);

  std::vector<Document> out;
  std::string line;
  std::size_t lineno = 0;
  bool in_doc = false;
  bool in_text = false;
  std::size_t doc_start = 0;
  std::string docno;
  std::string text;

  while (std::getline(in, line)) {
    ++lineno;
    ++rep.lines;
    std::string_view rest = line;
    while (!rest.empty()) {
      if (!in_doc) {
        auto p = rest.find("<DOC>");
        if (p == std::string_view::npos) break;
        in_doc = true;
        doc_start = lineno;
        docno.clear();
        text.clear();
        rest.remove_prefix(p + 5);
        continue;
      }
      if (in_text) {
        auto p = rest.find("</TEXT>");
        if (p == std::string_view::npos) {
          text += strip_tags(rest);
          text.push_back('\n');
          break;
        }
        text += strip_tags(rest.substr(0, p));
        text.push_back(' ');
        in_text = false;
        rest.remove_prefix(p + 7);
        continue;
      }
      auto p_docno = rest.find("<DOCNO>");
      auto p_text = rest.find("<TEXT>");
      auto p_end = rest.find("</DOC>");
      auto first = std::min({p_docno, p_text, p_end});
      if (first == std::string_view::npos) break;
      if (first == p_docno) {
        auto close = rest.find("</DOCNO>", p_docno);
        if (close == std::string_view::npos) {
          issue(lineno, "<DOCNO> without closing tag on the same line");
          rest = {};
          break;
        }
        docno = std::string(trim(rest.substr(p_docno + 7, close - p_docno - 7)));
        rest.remove_prefix(close + 8);
      } else if (first == p_text) {
        in_text = true;
        rest.remove_prefix(p_text + 6);
      } else {
        in_doc = false;
        rest.remove_prefix(p_end + 6);
        if (docno.empty()) {
          issue(doc_start, "document without <DOCNO>");
          continue;
        }
        out.push_back(make_document(docno, text, options.tokenizer));
        ++rep.records;
      }
    }
  }
  if (in_doc) issue(doc_start, "unterminated <DOC>");
  return out;
}

std::vector<Document> read_jsonl_documents(const std::string& path,
                                           const IngestOptions& options,
                                           IngestReport* report) {
  return read_jsonl<Document>(path, options, report,
                              [&](std::string id, std::string text) {
                                return make_document(std::move(id), std::move(text),
                                                     options.tokenizer);
                              });
}

std::vector<Query> read_jsonl_queries(const std::string& path,
                                      const IngestOptions& options,
                                      IngestReport* report) {
  return read_jsonl<Query>(path, options, report, [&](std::string id, std::string text) {
    return make_query(std::move(id), std::move(text), options.tokenizer);
  });
}

std::vector<Query> read_topics(const std::string& path, const IngestOptions& options,
                               IngestReport* report) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  IssueSink issue(path, options, rep);
  auto in = open_input(path);

  std::vector<Query> out;
  std::string line;
  std::size_t lineno = 0;
  bool in_top = false;
  bool want_title = false;
  std::size_t top_start = 0;
  std::string num;
  std::string title;

  auto field_after = [](std::string_view s, std::string_view tag) {
    std::string_view v = trim(s.substr(s.find(tag) + tag.size()));
    for (std::string_view prefix : {"Number:", "Topic:"}) {
      if (v.substr(0, prefix.size()) == prefix) v = trim(v.substr(prefix.size()));
    }
    return std::string(v);
  };

  while (std::getline(in, line)) {
    ++lineno;
    ++rep.lines;
    std::string_view s = line;
    if (s.find("<top>") != std::string_view::npos) {
      if (in_top) issue(top_start, "<top> without closing </top>");
      in_top = true;
      top_start = lineno;
      num.clear();
      title.clear();
      want_title = false;
      continue;
    }
    if (!in_top) continue;
    if (s.find("</top>") != std::string_view::npos) {
      in_top = false;
      if (num.empty() || is_blank(title)) {
        issue(top_start, "topic missing <num> or <title>");
        continue;
      }
      out.push_back(make_query(num, std::string(trim(title)), options.tokenizer));
      ++rep.records;
      continue;
    }
    if (s.find("<num>") != std::string_view::npos) {
      num = field_after(s, "<num>");
      want_title = false;
    } else if (s.find("<title>") != std::string_view::npos) {
      title = field_after(s, "<title>");
      want_title = title.empty();
    } else if (s.find('<') != std::string_view::npos) {
      want_title = false;
    } else if (want_title && !is_blank(s)) {
      title = std::string(trim(s));
      want_title = false;
    }
  }
  if (in_top) issue(top_start, "unterminated <top>");
  return out;
}

std::vector<QrelsEntry> read_qrels(const std::string& path, const IngestOptions& options,
                                   IngestReport* report) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  IssueSink issue(path, options, rep);
  auto in = open_input(path);
  std::vector<QrelsEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    ++rep.lines;
    if (is_blank(line)) continue;
    auto fields = split_ws(line);
    int grade = 0;
    if (fields.size() != 4) {
      issue(lineno, "expected 4 fields, found " + std::to_string(fields.size()));
      continue;
    }
    if (!parse_int(fields[3], grade)) {
      issue(lineno, "relevance grade is not an integer");
      continue;
    }
    out.push_back({std::string(fields[0]), std::string(fields[2]), grade});
    ++rep.records;
  }
  return out;
}

Qrels to_qrels(const std::vector<QrelsEntry>& entries) {
  Qrels q;
  for (const auto& e : entries) q[e.query_id][e.doc_id] = e.grade;
  return q;
}

EmbeddingTable read_embeddings(const std::string& path, const IngestOptions& options,
                               IngestReport* report) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  IssueSink issue(path, options, rep);
  auto in = open_input(path);
  EmbeddingTable table;
  table.dim = options.embedding_dim;
  std::vector<double> vec(table.dim);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    ++rep.lines;
    if (is_blank(line)) continue;
    auto fields = split_ws(line);
    if (table.dim == 0) {
      if (fields.size() < 2) {
        issue(lineno, "expected a term followed by vector components");
        continue;
      }
      table.dim = fields.size() - 1;
      vec.resize(table.dim);
    }
    if (fields.size() != table.dim + 1) {
      issue(lineno, "expected " + std::to_string(table.dim) + " values, found " +
                        std::to_string(fields.empty() ? 0 : fields.size() - 1));
      continue;
    }
    bool ok = true;
    for (std::size_t i = 0; i < table.dim && ok; ++i) ok = parse_double(fields[i + 1], vec[i]);
    if (!ok) {
      issue(lineno, "non-numeric vector component");
      continue;
    }
    std::string term(fields[0]);
    if (table.find(term)) {
      issue(lineno, "duplicate term '" + term + "'");
      continue;
    }
    table.add(std::move(term), vec);
    ++rep.records;
  }
  return table;
}

IngestResult ingest(const std::string& path, IngestFormat format,
                    const IngestOptions& options, IngestReport* report) {
  switch (format) {
    case IngestFormat::TrecText: return read_trec_text(path, options, report);
    case IngestFormat::JsonLines: return read_jsonl_documents(path, options, report);
    case IngestFormat::Qrels: return read_qrels(path, options, report);
    case IngestFormat::Topics: return read_topics(path, options, report);
    case IngestFormat::EmbeddingText: return read_embeddings(path, options, report);
  }
  throw Error("unknown ingest format");
}

void write_jsonl_documents(const std::string& path, const std::vector<Document>& docs) {
  auto out = open_output(path);
  for (const auto& d : docs) out << json{{"id", d.doc_id}, {"text", d.text}}.dump() << '\n';
}

void write_jsonl_queries(const std::string& path, const std::vector<Query>& queries) {
  auto out = open_output(path);
  for (const auto& q : queries) out << json{{"id", q.query_id}, {"text", q.text}}.dump() << '\n';
}

void write_qrels(const std::string& path, const Qrels& qrels) {
  auto out = open_output(path);
  for (const auto& [qid, docs] : qrels) {
    for (const auto& [did, grade] : docs) out << qid << " 0 " << did << ' ' << grade << '\n';
  }
}

void write_embeddings(const std::string& path, const EmbeddingTable& table) {
  auto out = open_output(path);
  out << std::setprecision(17);
  for (std::size_t i = 0; i < table.terms.size(); ++i) {
    out << table.terms[i];
    for (double v : table.row(i)) out << ' ' << v;
    out << '\n';
  }
}

}  // namespace wsrank
