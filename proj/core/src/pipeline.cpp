#include "wsrank/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "wsrank/random.hpp"

namespace wsrank {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Config: return "config";
    case Stage::Index: return "index";
    case Stage::Rank: return "rank";
    case Stage::GenWeak: return "gen-weak";
    case Stage::FitLabels: return "fit-labels";
    case Stage::Train: return "train";
    case Stage::Influence: return "influence";
    case Stage::Rerank: return "rerank";
    case Stage::Eval: return "eval";
    case Stage::Report: return "report";
  }
  return "unknown";
}

int exit_code(Stage stage) {
  switch (stage) {
    case Stage::Config: return 2;
    case Stage::Index: return 10;
    case Stage::Rank: return 11;
    case Stage::GenWeak: return 12;
    case Stage::FitLabels: return 13;
    case Stage::Train: return 14;
    case Stage::Influence: return 15;
    case Stage::Rerank: return 16;
    case Stage::Eval: return 17;
    case Stage::Report: return 18;
  }
  return 1;
}

std::string_view to_string(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::Rank: return "rank";
    case PipelineMode::NoiseAware: return "noise-aware";
    case PipelineMode::InfluenceAware: return "influence-aware";
  }
  return "unknown";
}

PipelineMode parse_pipeline_mode(std::string_view name) {
  if (name == "rank") return PipelineMode::Rank;
  if (name == "noise-aware") return PipelineMode::NoiseAware;
  if (name == "influence-aware") return PipelineMode::InfluenceAware;
  throw Error("unknown pipeline mode '" + std::string(name) +
              "' (expected rank, noise-aware or influence-aware)");
}

namespace {

constexpr PipelineMode kModes[] = {PipelineMode::Rank, PipelineMode::NoiseAware,
                                   PipelineMode::InfluenceAware};

template <class F>
auto in_stage(Stage stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// ---------------------------------------------------------------------------
// Config (de)serialization

void check_keys(const json& j, std::string_view where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string gain_name(Gain g) { return g == Gain::Linear ? "linear" : "exponential"; }

Gain parse_gain(const std::string& s) {
  if (s == "linear") return Gain::Linear;
  if (s == "exponential") return Gain::Exponential;
  throw Error("unknown gain '" + s + "'");
}

json config_to_json(const RunConfig& c) {
  json j;
  j["run_dir"] = c.run_dir;
  if (c.corpus) {
    const auto& p = *c.corpus;
    j["corpus"] = {{"documents", p.documents}, {"documents_format", p.documents_format},
                   {"queries", p.queries},     {"queries_format", p.queries_format},
                   {"train_queries", p.train_queries}, {"qrels", p.qrels},
                   {"embeddings", p.embeddings}};
  }
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["synthetic"] = {{"num_docs", s.num_docs},
                      {"num_queries", s.num_queries},
                      {"num_train_queries", s.num_train_queries},
                      {"vocab_size", s.vocab_size},
                      {"relevance_noise", s.relevance_noise},
                      {"seed", s.seed},
                      {"num_topics", s.num_topics},
                      {"terms_per_topic", s.terms_per_topic},
                      {"relevant_per_topic", s.relevant_per_topic},
                      {"mean_doc_length", s.mean_doc_length},
                      {"embedding_dim", s.embedding_dim}};
  }
  j["rankers"] = {{"bm25", {{"k1", c.rankers.bm25.k1}, {"b", c.rankers.bm25.b}}},
                  {"ql", {{"mu", c.rankers.ql.mu}}},
                  {"rm3",
                   {{"fb_docs", c.rankers.rm3.fb_docs},
                    {"fb_terms", c.rankers.rm3.fb_terms},
                    {"orig_weight", c.rankers.rm3.orig_weight},
                    {"depth", c.rankers.rm3.depth}}}};
  j["weak"] = {{"method", std::string(to_string(c.weak.method))},
               {"noise_sd", c.weak.noise_sd},
               {"seed", c.weak.seed}};
  j["ensemble"] = c.ensemble;
  j["weakgen"] = {{"depth", c.weakgen.depth},
                  {"n_neg", c.weakgen.n_neg},
                  {"num_rankings", c.weakgen.num_rankings},
                  {"seed", c.weakgen.seed}};
  j["labelmodel"] = {{"lr", c.labelmodel.lr},
                     {"epochs", c.labelmodel.epochs},
                     {"l2", c.labelmodel.l2},
                     {"seed", c.labelmodel.seed},
                     {"mode", c.labelmodel.mode == LabelModelMode::Exact ? "exact" : "gibbs"},
                     {"gibbs_samples", c.labelmodel.gibbs_samples},
                     {"gibbs_burn_in", c.labelmodel.gibbs_burn_in},
                     {"init_accuracy", c.labelmodel.init_accuracy},
                     {"propensity", c.labelmodel.propensity}};
  j["model"] = {{"hidden", c.model.hidden},
                {"embedding_dim", c.model.embedding_dim},
                {"freeze_embeddings", c.model.freeze_embeddings},
                {"seed", c.model.seed}};
  j["train"] = {{"lr", c.train.lr},         {"batch", c.train.batch},
                {"epochs", c.train.epochs}, {"patience", c.train.patience},
                {"seed", c.train.seed},     {"margin", c.train.loss.margin}};
  j["influence"] = {{"damping", c.influence.damping},
                    {"cg_tol", c.influence.cg_tol},
                    {"cg_max_iter", c.influence.cg_max_iter},
                    {"cg_slack", c.influence.cg_slack},
                    {"dev_pairs_per_query", c.dev_pairs_per_query},
                    {"seed", c.influence_seed}};
  j["eval"] = {{"k", c.eval_k},
               {"rerank_depth", c.rerank_depth},
               {"gain", gain_name(c.gain)},
               {"alphas", c.alphas},
               {"dev_fraction", c.dev_fraction}};
  return j;
}

RunConfig config_from_json(const json& j) {
  check_keys(j, "config",
             {"run_dir", "corpus", "synthetic", "rankers", "weak", "ensemble", "weakgen",
              "labelmodel", "model", "train", "influence", "eval"});
  RunConfig c;
  read_opt(j, "run_dir", c.run_dir);
  if (j.contains("corpus")) {
    const auto& p = j.at("corpus");
    check_keys(p, "corpus",
               {"documents", "documents_format", "queries", "queries_format", "train_queries",
                "qrels", "embeddings"});
    CorpusPaths cp;
    read_opt(p, "documents", cp.documents);
    read_opt(p, "documents_format", cp.documents_format);
    read_opt(p, "queries", cp.queries);
    read_opt(p, "queries_format", cp.queries_format);
    read_opt(p, "train_queries", cp.train_queries);
    read_opt(p, "qrels", cp.qrels);
    read_opt(p, "embeddings", cp.embeddings);
    c.corpus = cp;
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    check_keys(s, "synthetic",
               {"num_docs", "num_queries", "num_train_queries", "vocab_size", "relevance_noise",
                "seed", "num_topics", "terms_per_topic", "relevant_per_topic", "mean_doc_length",
                "embedding_dim"});
    SyntheticParams sp;
    read_opt(s, "num_docs", sp.num_docs);
    read_opt(s, "num_queries", sp.num_queries);
    read_opt(s, "num_train_queries", sp.num_train_queries);
    read_opt(s, "vocab_size", sp.vocab_size);
    read_opt(s, "relevance_noise", sp.relevance_noise);
    read_opt(s, "seed", sp.seed);
    read_opt(s, "num_topics", sp.num_topics);
    read_opt(s, "terms_per_topic", sp.terms_per_topic);
    read_opt(s, "relevant_per_topic", sp.relevant_per_topic);
    read_opt(s, "mean_doc_length", sp.mean_doc_length);
    read_opt(s, "embedding_dim", sp.embedding_dim);
    c.synthetic = sp;
  }
  if (j.contains("rankers")) {
    const auto& r = j.at("rankers");
    check_keys(r, "rankers", {"bm25", "ql", "rm3"});
    if (r.contains("bm25")) {
      check_keys(r.at("bm25"), "rankers.bm25", {"k1", "b"});
      read_opt(r.at("bm25"), "k1", c.rankers.bm25.k1);
      read_opt(r.at("bm25"), "b", c.rankers.bm25.b);
    }
    if (r.contains("ql")) {
      check_keys(r.at("ql"), "rankers.ql", {"mu"});
      read_opt(r.at("ql"), "mu", c.rankers.ql.mu);
    }
    if (r.contains("rm3")) {
      const auto& m = r.at("rm3");
      check_keys(m, "rankers.rm3", {"fb_docs", "fb_terms", "orig_weight", "depth"});
      read_opt(m, "fb_docs", c.rankers.rm3.fb_docs);
      read_opt(m, "fb_terms", c.rankers.rm3.fb_terms);
      read_opt(m, "orig_weight", c.rankers.rm3.orig_weight);
      read_opt(m, "depth", c.rankers.rm3.depth);
    }
  }
  if (j.contains("weak")) {
    const auto& w = j.at("weak");
    check_keys(w, "weak", {"method", "noise_sd", "seed"});
    if (w.contains("method")) c.weak.method = parse_ranker_method(w.at("method").get<std::string>());
    read_opt(w, "noise_sd", c.weak.noise_sd);
    read_opt(w, "seed", c.weak.seed);
  }
  read_opt(j, "ensemble", c.ensemble);
  if (j.contains("weakgen")) {
    const auto& w = j.at("weakgen");
    check_keys(w, "weakgen", {"depth", "n_neg", "num_rankings", "seed"});
    read_opt(w, "depth", c.weakgen.depth);
    read_opt(w, "n_neg", c.weakgen.n_neg);
    read_opt(w, "num_rankings", c.weakgen.num_rankings);
    read_opt(w, "seed", c.weakgen.seed);
  }
  if (j.contains("labelmodel")) {
    const auto& l = j.at("labelmodel");
    check_keys(l, "labelmodel",
               {"lr", "epochs", "l2", "seed", "mode", "gibbs_samples", "gibbs_burn_in",
                "init_accuracy", "propensity"});
    read_opt(l, "lr", c.labelmodel.lr);
    read_opt(l, "epochs", c.labelmodel.epochs);
    read_opt(l, "l2", c.labelmodel.l2);
    read_opt(l, "seed", c.labelmodel.seed);
    if (l.contains("mode")) {
      const auto mode = l.at("mode").get<std::string>();
      if (mode == "exact") {
        c.labelmodel.mode = LabelModelMode::Exact;
      } else if (mode == "gibbs") {
        c.labelmodel.mode = LabelModelMode::Gibbs;
      } else {
        throw Error("labelmodel.mode must be 'exact' or 'gibbs'");
      }
    }
    read_opt(l, "gibbs_samples", c.labelmodel.gibbs_samples);
    read_opt(l, "gibbs_burn_in", c.labelmodel.gibbs_burn_in);
    read_opt(l, "init_accuracy", c.labelmodel.init_accuracy);
    read_opt(l, "propensity", c.labelmodel.propensity);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model", {"hidden", "embedding_dim", "freeze_embeddings", "seed"});
    read_opt(m, "hidden", c.model.hidden);
    read_opt(m, "embedding_dim", c.model.embedding_dim);
    read_opt(m, "freeze_embeddings", c.model.freeze_embeddings);
    read_opt(m, "seed", c.model.seed);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train", {"lr", "batch", "epochs", "patience", "seed", "margin"});
    read_opt(t, "lr", c.train.lr);
    read_opt(t, "batch", c.train.batch);
    read_opt(t, "epochs", c.train.epochs);
    read_opt(t, "patience", c.train.patience);
    read_opt(t, "seed", c.train.seed);
    read_opt(t, "margin", c.train.loss.margin);
  }
  if (j.contains("influence")) {
    const auto& i = j.at("influence");
    check_keys(i, "influence",
               {"damping", "cg_tol", "cg_max_iter", "cg_slack", "dev_pairs_per_query", "seed"});
    read_opt(i, "damping", c.influence.damping);
    read_opt(i, "cg_tol", c.influence.cg_tol);
    read_opt(i, "cg_max_iter", c.influence.cg_max_iter);
    read_opt(i, "cg_slack", c.influence.cg_slack);
    read_opt(i, "dev_pairs_per_query", c.dev_pairs_per_query);
    read_opt(i, "seed", c.influence_seed);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, "eval", {"k", "rerank_depth", "gain", "alphas", "dev_fraction"});
    read_opt(e, "k", c.eval_k);
    read_opt(e, "rerank_depth", c.rerank_depth);
    if (e.contains("gain")) c.gain = parse_gain(e.at("gain").get<std::string>());
    read_opt(e, "alphas", c.alphas);
    read_opt(e, "dev_fraction", c.dev_fraction);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Files

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(p.string() + ": cannot open file for reading");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(p.string() + ": cannot open file for writing");
  out << text;
}

void require(const fs::path& p, Stage producer) {
  if (!fs::exists(p)) {
    throw Error("missing artifact " + p.string() + " (run the " +
                std::string(to_string(producer)) + " stage first)");
  }
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string alpha_tag(double a) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << a;
  return s.str();
}

fs::path data_dir(const fs::path& run) { return run / "data"; }
fs::path model_path(const fs::path& run, std::string_view name) {
  return run / "model" / (std::string(name) + ".ckpt");
}
fs::path metrics_jsonl(const fs::path& run, PipelineMode mode) {
  return run / std::string(to_string(mode)) / "metrics.jsonl";
}

std::vector<RankedList> ordered(const std::map<std::string, RankedList>& lists) {
  std::vector<RankedList> out;
  for (const auto& [qid, l] : lists) out.push_back(l);
  return out;
}

std::vector<std::string> ids_of(const std::vector<Query>& qs) {
  std::vector<std::string> out;
  for (const auto& q : qs) out.push_back(q.query_id);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw StageError(Stage::Config, what); };
  if (run_dir.empty()) fail("run_dir is required");
  if (corpus.has_value() == synthetic.has_value()) {
    fail("exactly one of 'corpus' and 'synthetic' must be given");
  }
  if (corpus) {
    auto need = [&](const std::string& field, const std::string& path, bool required) {
      if (path.empty()) {
        if (required) fail("corpus." + field + " is required");
        return;
      }
      if (!fs::exists(path)) fail("corpus." + field + ": no such file '" + path + "'");
    };
    need("documents", corpus->documents, true);
    need("queries", corpus->queries, true);
    need("qrels", corpus->qrels, true);
    need("train_queries", corpus->train_queries, false);
    need("embeddings", corpus->embeddings, false);
    if (corpus->documents_format != "trec-text" && corpus->documents_format != "json-lines") {
      fail("corpus.documents_format must be trec-text or json-lines");
    }
    if (corpus->queries_format != "topics" && corpus->queries_format != "json-lines") {
      fail("corpus.queries_format must be topics or json-lines");
    }
  }
  try {
    rankers.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
  if (ensemble.empty()) fail("ensemble needs at least one ranker");
  for (const auto& tag : ensemble) {
    if (tag == "weak") continue;
    try {
      parse_ranker_method(tag);
    } catch (const std::exception& e) {
      fail("ensemble: " + std::string(e.what()));
    }
  }
  if (std::set<std::string>(ensemble.begin(), ensemble.end()).size() != ensemble.size()) {
    fail("ensemble contains duplicate rankers");
  }
  if (!(weak.noise_sd >= 0.0) || !std::isfinite(weak.noise_sd)) fail("weak.noise_sd must be >= 0");
  if (weakgen.depth == 0 || weakgen.num_rankings == 0) {
    fail("weakgen.depth and weakgen.num_rankings must be positive");
  }
  if (train.batch == 0 || train.epochs == 0 || !(train.lr > 0.0)) {
    fail("train.lr, train.batch and train.epochs must be positive");
  }
  if (!(influence.damping > 0.0)) fail("influence.damping must be positive");
  if (!(influence.cg_tol > 0.0)) fail("influence.cg_tol must be positive");
  if (eval_k == 0 || rerank_depth == 0) fail("eval.k and eval.rerank_depth must be positive");
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) fail("eval.alphas must lie in [0, 1]");
  }
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) fail("eval.dev_fraction must lie in (0, 1)");
}

RunConfig parse_config(const std::string& json_text) {
  return in_stage(Stage::Config, [&] {
    const json j = json::parse(json_text);
    // A run manifest carries the config it was produced with.
    return config_from_json(j.contains("config") && j.at("config").is_object() ? j.at("config")
                                                                                 : j);
  });
}

RunConfig load_config(const std::string& path) {
  return in_stage(Stage::Config, [&] { return parse_config(read_file(path)); });
}

std::string dump_config(const RunConfig& config) { return config_to_json(config).dump(2); }

// ---------------------------------------------------------------------------
// index

IndexStats cmd_index(const RunConfig& config) {
  config.validate();
  return in_stage(Stage::Index, [&] {
    const fs::path run = config.run_dir;
    fs::create_directories(data_dir(run));
    fs::create_directories(run / "index");

    std::vector<Document> docs;
    std::vector<Query> queries;
    std::vector<Query> train;
    Qrels gold;
    std::optional<EmbeddingTable> emb;
    if (config.synthetic) {
      SyntheticWorld world = generate_synthetic(*config.synthetic);
      docs = std::move(world.docs);
      queries = std::move(world.queries);
      train = std::move(world.train_queries);
      gold = std::move(world.gold);
      emb = std::move(world.embeddings);
    } else {
      const auto& p = *config.corpus;
      IngestReport rep;
      docs = p.documents_format == "trec-text" ? read_trec_text(p.documents, {}, &rep)
                                               : read_jsonl_documents(p.documents, {}, &rep);
      spdlog::info("read {} documents from {} lines", rep.records, rep.lines);
      queries = p.queries_format == "topics" ? read_topics(p.queries)
                                             : read_jsonl_queries(p.queries);
      if (!p.train_queries.empty()) train = read_jsonl_queries(p.train_queries);
      gold = to_qrels(read_qrels(p.qrels));
      if (!p.embeddings.empty()) emb = read_embeddings(p.embeddings, {});
    }
    if (docs.empty()) throw Error("corpus contains no documents");
    if (queries.empty()) throw Error("no judged queries");
    if (train.empty()) {
      spdlog::warn("no unjudged training queries; weak supervision uses the judged queries");
      train = queries;
    }

    InvertedIndex index = build_index(docs);
    write_jsonl_documents((data_dir(run) / "documents.jsonl").string(), index.documents());
    write_jsonl_queries((data_dir(run) / "queries.jsonl").string(), queries);
    write_jsonl_queries((data_dir(run) / "train_queries.jsonl").string(), train);
    write_qrels((data_dir(run) / "qrels.txt").string(), gold);
    const fs::path emb_path = data_dir(run) / "embeddings.txt";
    if (emb) {
      write_embeddings(emb_path.string(), *emb);
    } else {
      fs::remove(emb_path);
    }

    IndexStats st;
    st.documents = index.num_docs();
    st.vocabulary = index.vocab_size();
    st.tokens = index.total_tokens();
    st.avg_doc_length = index.avg_doc_length();
    st.queries = queries.size();
    st.train_queries = train.size();
    for (const auto& [q, d] : gold) st.judged_pairs += d.size();
    st.digest = index.digest();
    const json j = {{"documents", st.documents},   {"vocabulary", st.vocabulary},
                    {"tokens", st.tokens},         {"avg_doc_length", st.avg_doc_length},
                    {"queries", st.queries},       {"train_queries", st.train_queries},
                    {"judged_pairs", st.judged_pairs}, {"digest", hex(st.digest)}};
    write_file(run / "index" / "stats.json", j.dump(2) + "\n");
    spdlog::info("indexed {} documents, {} terms", st.documents, st.vocabulary);
    return st;
  });
}

IndexStats read_index_stats(const std::string& run_dir) {
  const auto j = json::parse(read_file(fs::path(run_dir) / "index" / "stats.json"));
  IndexStats st;
  st.documents = j.at("documents").get<std::size_t>();
  st.vocabulary = j.at("vocabulary").get<std::size_t>();
  st.tokens = j.at("tokens").get<std::uint64_t>();
  st.avg_doc_length = j.at("avg_doc_length").get<double>();
  st.queries = j.at("queries").get<std::size_t>();
  st.train_queries = j.at("train_queries").get<std::size_t>();
  st.judged_pairs = j.at("judged_pairs").get<std::size_t>();
  st.digest = std::stoull(j.at("digest").get<std::string>(), nullptr, 16);
  return st;
}

// ---------------------------------------------------------------------------
// Workspace

Workspace::Workspace(RunConfig config) : config_(std::move(config)) {
  in_stage(Stage::Index, [&] {
    const fs::path data = data_dir(config_.run_dir);
    require(config_.run_dir / fs::path("index") / "stats.json", Stage::Index);
    index_ = build_index(read_jsonl_documents((data / "documents.jsonl").string()));
    gold_ = to_qrels(read_qrels((data / "qrels.txt").string()));
    const auto judged = read_jsonl_queries((data / "queries.jsonl").string());
    train_ = read_jsonl_queries((data / "train_queries.jsonl").string());
    for (const auto& q : train_) train_map_.emplace(q.query_id, q);
    if (fs::exists(data / "embeddings.txt")) {
      embeddings_ = read_embeddings((data / "embeddings.txt").string(), {});
    }
    if (judged.size() < 2) throw Error("need at least two judged queries for a dev/eval split");
    auto n_dev = static_cast<std::size_t>(
        std::llround(config_.dev_fraction * static_cast<double>(judged.size())));
    n_dev = std::clamp<std::size_t>(n_dev, 1, judged.size() - 1);
    dev_.assign(judged.begin(), judged.begin() + static_cast<std::ptrdiff_t>(n_dev));
    eval_.assign(judged.begin() + static_cast<std::ptrdiff_t>(n_dev), judged.end());
    return 0;
  });
}

std::unique_ptr<Ranker> Workspace::weak_ranker() const {
  if (config_.weak.noise_sd > 0.0) {
    return std::make_unique<NoisyRanker>(index_, config_.weak.method, config_.rankers,
                                         config_.weak.noise_sd, config_.weak.seed);
  }
  return std::make_unique<MethodRanker>(index_, config_.weak.method, config_.rankers);
}

std::unique_ptr<Ranker> Workspace::ranker(const std::string& tag) const {
  if (tag == "weak") return weak_ranker();
  return std::make_unique<MethodRanker>(index_, parse_ranker_method(tag), config_.rankers);
}

const std::map<std::string, RankedList>& Workspace::candidates() const {
  if (!candidates_) {
    std::map<std::string, RankedList> c;
    for (const auto* qs : {&dev_, &eval_}) {
      for (const auto& q : *qs) {
        c[q.query_id] = retrieve_topk(index_, q, config_.rerank_depth,
                                      RankerMethod::QueryLikelihood, config_.rankers);
      }
    }
    candidates_ = std::move(c);
  }
  return *candidates_;
}

// ---------------------------------------------------------------------------
// rank

void cmd_rank(const Workspace& ws) {
  in_stage(Stage::Rank, [&] {
    const fs::path runs = ws.dir() / "runs";
    fs::create_directories(runs);
    write_trec_run((runs / "ql.trec").string(), ordered(ws.candidates()), "ql");
    auto weak = ws.weak_ranker();
    std::vector<RankedList> lists;
    for (const auto* qs : {&ws.dev_queries(), &ws.eval_queries()}) {
      for (const auto& q : *qs) lists.push_back(weak->retrieve(q, ws.config().rerank_depth));
    }
    std::sort(lists.begin(), lists.end(),
              [](const RankedList& a, const RankedList& b) { return a.query_id < b.query_id; });
    write_trec_run((runs / "weak.trec").string(), lists, "weak");
    return 0;
  });
}

// ---------------------------------------------------------------------------
// gen-weak

WeakSummary cmd_gen_weak(const Workspace& ws) {
  return in_stage(Stage::GenWeak, [&] {
    const auto& cfg = ws.config();
    const fs::path dir = ws.dir() / "weak";
    fs::create_directories(dir);
    auto weak = ws.weak_ranker();
    const WeakDataset ds = generate_dataset(ws.index(), ws.train_queries(), *weak, cfg.weakgen);

    std::vector<RankingsByQuery> rankings;
    for (const auto& tag : cfg.ensemble) {
      auto r = ws.ranker(tag);
      RankingsByQuery by_query;
      for (const auto& qid : ds.query_ids) {
        by_query[qid] = r->retrieve(ws.train_query_map().at(qid), cfg.weakgen.depth);
      }
      rankings.push_back(std::move(by_query));
    }
    const LabelMatrix votes =
        build_label_matrix(ds.pairs, cfg.ensemble, rankings, cfg.weakgen.depth);
    write_dataset((dir / "pairs.jsonl").string(), ds.pairs);
    write_label_matrix((dir / "label_matrix.jsonl").string(), votes);
    spdlog::info("weak supervision: {} pairs from {} queries ({} skipped)", ds.pairs.size(),
                 ds.query_ids.size(), ds.skipped_queries);
    return WeakSummary{ds.pairs.size(), ds.query_ids.size(), ds.skipped_queries};
  });
}

// ---------------------------------------------------------------------------
// fit-labels

LabelModelTrace cmd_fit_labels(const Workspace& ws) {
  return in_stage(Stage::FitLabels, [&] {
    const fs::path weak = ws.dir() / "weak" / "label_matrix.jsonl";
    require(weak, Stage::GenWeak);
    const LabelMatrix votes = read_label_matrix(weak.string());
    LabelModelTrace trace;
    const LabelModelParams params = fit_label_model(votes, ws.config().labelmodel, &trace);
    const fs::path dir = ws.dir() / "labels";
    fs::create_directories(dir);
    write_label_model((dir / "model.txt").string(), params);
    write_soft_labels((dir / "soft.jsonl").string(), posteriors(params, votes));
    for (std::size_t j = 0; j < params.k(); ++j) {
      spdlog::info("label model: accuracy weight {} = {:.4f}", params.ranker_tags[j],
                   params.accuracy_weight(j));
    }
    return trace;
  });
}

// ---------------------------------------------------------------------------
// train

namespace {

InitOptions init_options(const RunConfig& cfg, PipelineMode mode) {
  InitOptions o = cfg.model;
  o.output_mode = mode == PipelineMode::Rank ? OutputMode::Tanh : OutputMode::Logit;
  return o;
}

TrainOptions train_options(const RunConfig& cfg, PipelineMode mode) {
  TrainOptions o = cfg.train;
  o.loss.kind = mode == PipelineMode::Rank ? LossKind::Hinge : LossKind::CrossEntropy;
  return o;
}

RankerParams fresh_model(const Workspace& ws, PipelineMode mode) {
  return init_ranker(ws.index().terms(), ws.embeddings(), init_options(ws.config(), mode));
}

std::vector<EncodedExample> training_examples(const Workspace& ws, PipelineMode mode,
                                              const RankerParams& params, EncodeStats* stats) {
  const fs::path pairs_path = ws.dir() / "weak" / "pairs.jsonl";
  require(pairs_path, Stage::GenWeak);
  const auto all = read_dataset(pairs_path.string());
  std::vector<TrainPair> pairs;
  std::vector<double> rel;
  if (mode == PipelineMode::NoiseAware) {
    const fs::path soft_path = ws.dir() / "labels" / "soft.jsonl";
    require(soft_path, Stage::FitLabels);
    rel = read_soft_labels(soft_path.string());
    if (rel.size() != all.size()) {
      throw Error("soft labels (" + std::to_string(rel.size()) + ") do not match pairs (" +
                  std::to_string(all.size()) + ")");
    }
    const fs::path votes_path = ws.dir() / "weak" / "label_matrix.jsonl";
    require(votes_path, Stage::GenWeak);
    const LabelMatrix votes = read_label_matrix(votes_path.string());
    if (votes.rows != all.size()) throw Error("label matrix does not match pairs");
    // All-abstain rows carry p = 0.5 and no information; leave them out.
    std::vector<double> kept_rel;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const auto row = votes.row(i);
      if (std::all_of(row.begin(), row.end(), [](std::int8_t v) { return v == 0; })) continue;
      pairs.push_back(all[i]);
      kept_rel.push_back(rel[i]);
    }
    rel = std::move(kept_rel);
  } else {
    for (const auto& p : all) {
      if (auto y = hard_label(p)) {
        pairs.push_back(p);
        rel.push_back(*y);
      }
    }
  }
  return encode_examples(params, ws.index(), ws.train_query_map(), pairs, rel, stats);
}

DevScorer dev_scorer(const Workspace& ws) {
  const auto* w = &ws;
  return [w](const RankerParams& p) {
    return rerank_ndcg(p, w->index(), w->dev_queries(), w->candidates(), w->gold(),
                       w->config().eval_k);
  };
}

}  // namespace

TrainSummary cmd_train(const Workspace& ws, PipelineMode mode) {
  return in_stage(Stage::Train, [&] {
    RankerParams init = fresh_model(ws, mode);
    TrainSummary s;
    EncodeStats st;
    const auto examples = training_examples(ws, mode, init, &st);
    s.examples = st.kept;
    s.skipped = st.skipped;
    if (examples.empty()) throw Error("no usable training pairs");
    const RankerParams model =
        train_ranker(std::move(init), examples, dev_scorer(ws), train_options(ws.config(), mode),
                     &s.trace);
    fs::create_directories(ws.dir() / "model");
    const auto name = mode == PipelineMode::InfluenceAware ? std::string("influence-base")
                                                           : std::string(to_string(mode));
    save_checkpoint(model_path(ws.dir(), name).string(), model);
    spdlog::info("{}: trained on {} pairs, best dev NDCG@{} {:.4f} at epoch {}", to_string(mode),
                 s.examples, ws.config().eval_k,
                 s.trace.dev_score.empty() ? 0.0 : s.trace.dev_score[s.trace.best_epoch - 1],
                 s.trace.best_epoch);
    return s;
  });
}

// ---------------------------------------------------------------------------
// influence

InfluenceSummary cmd_influence(const Workspace& ws) {
  return in_stage(Stage::Influence, [&] {
    const auto& cfg = ws.config();
    const fs::path base_path = model_path(ws.dir(), "influence-base");
    require(base_path, Stage::Train);
    const RankerParams base = load_checkpoint(base_path.string());
    const auto examples = training_examples(ws, PipelineMode::InfluenceAware, base, nullptr);

    const auto dev_pairs = gold_dev_pairs(ws.dev_queries(), ws.candidates(), ws.gold(),
                                          cfg.dev_pairs_per_query, cfg.influence_seed);
    std::map<std::string, Query> dev_map;
    for (const auto& q : ws.dev_queries()) dev_map.emplace(q.query_id, q);
    const auto dev_examples = encode_examples(base, ws.index(), dev_map, dev_pairs,
                                              std::vector<double>(dev_pairs.size(), 1.0));
    if (dev_examples.empty()) throw Error("no gold dev pairs among the dev candidates");

    const auto report =
        influence_scores(extract_bottleneck(base, examples), last_layer(base),
                         extract_bottleneck(base, dev_examples), cfg.influence);
    fs::create_directories(ws.dir() / "influence");
    write_influence_report((ws.dir() / "influence" / "report.jsonl").string(), report);

    InfluenceSummary s;
    s.dev_pairs = dev_examples.size();
    s.all_converged = report.all_converged;
    const RankerParams model =
        filter_and_retrain(fresh_model(ws, PipelineMode::InfluenceAware), examples, report,
                           dev_scorer(ws), train_options(cfg, PipelineMode::InfluenceAware),
                           &s.retrain, &s.trace);
    save_checkpoint(model_path(ws.dir(), "influence-aware").string(), model);
    return s;
  });
}

// ---------------------------------------------------------------------------
// rerank / eval

void cmd_rerank(const Workspace& ws, PipelineMode mode) {
  in_stage(Stage::Rerank, [&] {
    const auto mode_name = std::string(to_string(mode));
    const fs::path ckpt = model_path(ws.dir(), mode_name);
    require(ckpt, mode == PipelineMode::InfluenceAware ? Stage::Influence : Stage::Train);
    const RankerParams params = load_checkpoint(ckpt.string());
    std::vector<RankedList> model_lists;
    std::vector<std::vector<RankedList>> smoothed(ws.config().alphas.size());
    for (const auto* qs : {&ws.dev_queries(), &ws.eval_queries()}) {
      for (const auto& q : *qs) {
        const RankedList& base = ws.candidates().at(q.query_id);
        model_lists.push_back(rerank(params, ws.index(), q, base));
        for (std::size_t a = 0; a < smoothed.size(); ++a) {
          smoothed[a].push_back(smooth(model_lists.back(), base, ws.config().alphas[a]));
        }
      }
    }
    auto by_qid = [](const RankedList& a, const RankedList& b) { return a.query_id < b.query_id; };
    const fs::path runs = ws.dir() / "runs";
    fs::create_directories(runs);
    std::sort(model_lists.begin(), model_lists.end(), by_qid);
    write_trec_run((runs / (mode_name + ".model.trec")).string(), model_lists, mode_name);
    for (std::size_t a = 0; a < smoothed.size(); ++a) {
      std::sort(smoothed[a].begin(), smoothed[a].end(), by_qid);
      const auto tag = "smoothed-" + alpha_tag(ws.config().alphas[a]);
      write_trec_run((runs / (mode_name + "." + tag + ".trec")).string(), smoothed[a],
                     mode_name + "+" + tag);
    }
    return 0;
  });
}

std::vector<EvalResult> cmd_eval(const Workspace& ws, PipelineMode mode) {
  return in_stage(Stage::Eval, [&] {
    const auto& cfg = ws.config();
    const auto mode_name = std::string(to_string(mode));
    const fs::path runs = ws.dir() / "runs";
    const auto ids = ids_of(ws.eval_queries());
    std::vector<std::pair<std::string, fs::path>> columns{
        {"ql", runs / "ql.trec"}, {"weak", runs / "weak.trec"},
        {"model", runs / (mode_name + ".model.trec")}};
    for (double a : cfg.alphas) {
      const auto tag = "smoothed-" + alpha_tag(a);
      columns.emplace_back(tag, runs / (mode_name + "." + tag + ".trec"));
    }
    std::vector<EvalResult> results;
    for (const auto& [tag, path] : columns) {
      require(path, tag == "ql" || tag == "weak" ? Stage::Rank : Stage::Rerank);
      results.push_back(
          evaluate_run(tag, read_trec_run(path.string()), ids, ws.gold(), cfg.eval_k, cfg.gain));
    }
    const fs::path dir = ws.dir() / mode_name;
    fs::create_directories(dir);
    write_metrics((dir / "metrics.txt").string(), (dir / "metrics.jsonl").string(), results);
    return results;
  });
}

// ---------------------------------------------------------------------------
// report

std::string cmd_report(const std::string& run_dir) {
  return in_stage(Stage::Report, [&] {
    const fs::path run = run_dir;
    if (!fs::is_directory(run)) throw Error("run directory '" + run_dir + "' does not exist");
    std::vector<std::pair<PipelineMode, std::vector<EvalResult>>> done;
    std::vector<std::string> missing;
    for (auto mode : kModes) {
      const fs::path p = metrics_jsonl(run, mode);
      if (fs::exists(p)) {
        done.emplace_back(mode, read_metrics_jsonl(p.string()));
      } else {
        missing.push_back(p.string());
      }
    }
    if (done.empty()) {
      std::string msg = "no completed runs in '" + run_dir + "'; missing artifacts:";
      for (const auto& m : missing) msg += "\n  " + m;
      throw Error(msg);
    }
    auto find = [](const std::vector<EvalResult>& rs, const std::string& tag) -> const EvalResult* {
      for (const auto& r : rs) {
        if (r.tag == tag) return &r;
      }
      return nullptr;
    };
    std::vector<EvalResult> columns;
    for (const char* base : {"ql", "weak"}) {
      if (const auto* r = find(done.front().second, base)) columns.push_back(*r);
    }
    for (const auto& [mode, rs] : done) {
      for (const auto& r : rs) {
        if (r.tag == "ql" || r.tag == "weak") continue;
        EvalResult c = r;
        c.tag = r.tag == "model" ? std::string(to_string(mode))
                                 : std::string(to_string(mode)) + "+" + r.tag;
        columns.push_back(std::move(c));
      }
    }
    std::ostringstream out;
    out << format_metrics_table(columns);

    const EvalResult* ql = find(done.front().second, "ql");
    if (ql != nullptr) {
      out << "\nper-query NDCG@" << ql->k << " delta vs ql\n";
      out << std::left << std::setw(12) << "query";
      for (const auto& [mode, rs] : done) out << " | " << std::setw(16) << to_string(mode);
      out << '\n';
      for (std::size_t i = 0; i < ql->per_query.size(); ++i) {
        const auto& qid = ql->per_query[i].query_id;
        out << std::left << std::setw(12) << qid;
        for (const auto& [mode, rs] : done) {
          const EvalResult* m = find(rs, "model");
          double delta = 0.0;
          if (m != nullptr) {
            for (const auto& pq : m->per_query) {
              if (pq.query_id == qid) delta = pq.ndcg - ql->per_query[i].ndcg;
            }
          }
          out << " | " << std::right << std::setw(16) << std::showpos << std::fixed
              << std::setprecision(4) << delta << std::noshowpos << std::left;
        }
        out << '\n';
      }
    }
    return out.str();
  });
}

// ---------------------------------------------------------------------------
// pipeline

namespace {

void update_manifest(const RunConfig& cfg, PipelineMode mode, const json& mode_record) {
  const fs::path run = cfg.run_dir;
  const fs::path path = run / "manifest.json";
  json m;
  if (fs::exists(path)) {
    try {
      m = json::parse(read_file(path));
    } catch (const std::exception&) {
      m = json::object();
    }
  }
  m["config"] = config_to_json(cfg);
  m["seeds"] = {{"synthetic", cfg.synthetic ? json(cfg.synthetic->seed) : json(nullptr)},
                {"weak", cfg.weak.seed},
                {"weakgen", cfg.weakgen.seed},
                {"labelmodel", cfg.labelmodel.seed},
                {"model", cfg.model.seed},
                {"train", cfg.train.seed},
                {"influence", cfg.influence_seed}};
  json artifacts = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    artifacts[fs::relative(f, run).generic_string()] = hex(fnv1a(read_file(f)));
  }
  m["artifacts"] = artifacts;
  m["modes"][std::string(to_string(mode))] = mode_record;
  write_file(path, m.dump(2) + "\n");
}

json trace_json(const TrainTrace& t) {
  return {{"initial_loss", t.initial_loss},
          {"epoch_loss", t.epoch_loss},
          {"dev_ndcg", t.dev_score},
          {"best_epoch", t.best_epoch}};
}

}  // namespace

PipelineResult cmd_pipeline(const RunConfig& config, PipelineMode mode) {
  config.validate();
  if (!fs::exists(fs::path(config.run_dir) / "index" / "stats.json")) cmd_index(config);
  const Workspace ws(config);
  json record = json::object();

  cmd_rank(ws);
  const WeakSummary weak = cmd_gen_weak(ws);
  record["weak_pairs"] = weak.pairs;
  record["weak_queries"] = weak.queries;
  if (mode == PipelineMode::NoiseAware) {
    const LabelModelTrace lt = cmd_fit_labels(ws);
    record["label_model"] = {{"initial_objective", lt.initial_objective},
                             {"final_objective", lt.final_objective},
                             {"epochs", lt.epochs}};
  }
  const TrainSummary ts = cmd_train(ws, mode);
  record["train"] = trace_json(ts.trace);
  record["train_pairs"] = ts.examples;
  record["skipped_pairs"] = ts.skipped;
  if (mode == PipelineMode::InfluenceAware) {
    const InfluenceSummary is = cmd_influence(ws);
    record["dropped_fraction"] = is.retrain.dropped_fraction;
    record["kept_pairs"] = is.retrain.kept;
    record["dev_pairs"] = is.dev_pairs;
    record["cg_converged"] = is.all_converged;
    record["retrain"] = trace_json(is.trace);
  }
  cmd_rerank(ws, mode);
  PipelineResult res;
  res.results = cmd_eval(ws, mode);
  for (const auto& r : res.results) {
    if (r.tag == "model") res.model = r;
    if (r.tag == "weak") res.weak = r;
    if (r.tag == "ql") res.ql = r;
  }
  record["ndcg"] = {{"ql", res.ql.mean_ndcg}, {"weak", res.weak.mean_ndcg},
                    {"model", res.model.mean_ndcg}};
  in_stage(Stage::Report, [&] {
    update_manifest(config, mode, record);
    return 0;
  });
  spdlog::info("{}: NDCG@{} model {:.4f}, weak {:.4f}, ql {:.4f}", to_string(mode),
               config.eval_k, res.model.mean_ndcg, res.weak.mean_ndcg, res.ql.mean_ndcg);
  return res;
}

}  // namespace wsrank
