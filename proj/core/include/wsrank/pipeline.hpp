#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wsrank/corpus.hpp"
#include "wsrank/error.hpp"
#include "wsrank/eval.hpp"
#include "wsrank/influence.hpp"
#include "wsrank/labelmodel.hpp"
#include "wsrank/rankernet.hpp"
#include "wsrank/rankers.hpp"
#include "wsrank/weakgen.hpp"

namespace wsrank {

enum class Stage { Config, Index, Rank, GenWeak, FitLabels, Train, Influence, Rerank, Eval, Report };

std::string_view to_string(Stage stage);
/// Process exit code for a failure in `stage` (2 for configuration errors).
int exit_code(Stage stage);

/// A failure inside a pipeline stage; what() is prefixed with the stage name.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what)
      : Error(std::string(to_string(stage)) + ": " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

enum class PipelineMode { Rank, NoiseAware, InfluenceAware };

std::string_view to_string(PipelineMode mode);
PipelineMode parse_pipeline_mode(std::string_view name);

struct CorpusPaths {
  std::string documents;
  std::string documents_format = "json-lines";
  std::string queries;
  std::string queries_format = "json-lines";
  /// Unjudged queries for weak supervision; the judged queries when empty.
  std::string train_queries;
  std::string qrels;
  std::string embeddings;
};

struct WeakSource {
  RankerMethod method = RankerMethod::QueryLikelihood;
  /// Standard deviation of the per-(query, document) score noise.
  double noise_sd = 0.0;
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::string run_dir;
  std::optional<CorpusPaths> corpus;
  std::optional<SyntheticParams> synthetic;

  RankerConfig rankers;
  WeakSource weak;
  /// Columns of the label matrix; "weak" names the weak source itself.
  std::vector<std::string> ensemble{"bm25", "tfidf", "ql", "ql+rm3"};
  WeakGenOptions weakgen;
  LabelModelOptions labelmodel;
  InitOptions model;
  TrainOptions train;
  InfluenceOptions influence;
  std::size_t dev_pairs_per_query = 200;
  std::uint64_t influence_seed = 1;

  std::size_t eval_k = 10;
  std::size_t rerank_depth = 100;
  Gain gain = Gain::Linear;
  std::vector<double> alphas{0.5};
  double dev_fraction = 0.2;

  /// Throws StageError(Stage::Config) naming the offending field or path.
  void validate() const;
};

/// Reads a JSON config file, or the config snapshot inside a run manifest.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text);
std::string dump_config(const RunConfig& config);

struct IndexStats {
  std::size_t documents = 0;
  std::size_t vocabulary = 0;
  std::uint64_t tokens = 0;
  double avg_doc_length = 0.0;
  std::size_t queries = 0;
  std::size_t train_queries = 0;
  std::size_t judged_pairs = 0;
  std::uint64_t digest = 0;
};

/// Materializes the corpus (or a synthetic world) under run_dir/data and
/// writes run_dir/index/stats.json.
IndexStats cmd_index(const RunConfig& config);
IndexStats read_index_stats(const std::string& run_dir);

/// Loaded run-directory state shared by the later stages.
class Workspace {
 public:
  explicit Workspace(RunConfig config);

  const RunConfig& config() const { return config_; }
  std::filesystem::path dir() const { return config_.run_dir; }
  const InvertedIndex& index() const { return index_; }
  const Qrels& gold() const { return gold_; }
  const std::vector<Query>& dev_queries() const { return dev_; }
  const std::vector<Query>& eval_queries() const { return eval_; }
  const std::vector<Query>& train_queries() const { return train_; }
  const std::map<std::string, Query>& train_query_map() const { return train_map_; }
  const EmbeddingTable* embeddings() const { return embeddings_ ? &*embeddings_ : nullptr; }

  std::unique_ptr<Ranker> weak_ranker() const;
  std::unique_ptr<Ranker> ranker(const std::string& tag) const;
  /// QL top-depth lists for every judged query.
  const std::map<std::string, RankedList>& candidates() const;

 private:
  RunConfig config_;
  InvertedIndex index_;
  Qrels gold_;
  std::vector<Query> dev_;
  std::vector<Query> eval_;
  std::vector<Query> train_;
  std::map<std::string, Query> train_map_;
  std::optional<EmbeddingTable> embeddings_;
  mutable std::optional<std::map<std::string, RankedList>> candidates_;
};

/// Writes runs/ql.trec and runs/weak.trec for judged queries and
/// runs/train.<tag>.trec for every ensemble column.
void cmd_rank(const Workspace& ws);

struct WeakSummary {
  std::size_t pairs = 0;
  std::size_t queries = 0;
  std::size_t skipped_queries = 0;
};
/// weak/pairs.jsonl and weak/label_matrix.jsonl.
WeakSummary cmd_gen_weak(const Workspace& ws);

/// labels/model.txt and labels/soft.jsonl.
LabelModelTrace cmd_fit_labels(const Workspace& ws);

struct TrainSummary {
  std::size_t examples = 0;
  std::size_t skipped = 0;
  TrainTrace trace;
};
/// model/<mode>.ckpt; influence-aware writes the unfiltered model/influence-base.ckpt.
TrainSummary cmd_train(const Workspace& ws, PipelineMode mode);

struct InfluenceSummary {
  RetrainSummary retrain;
  std::size_t dev_pairs = 0;
  bool all_converged = true;
  TrainTrace trace;
};
/// influence/report.jsonl and model/influence-aware.ckpt.
InfluenceSummary cmd_influence(const Workspace& ws);

/// runs/<mode>.model.trec and runs/<mode>.smoothed-<alpha>.trec over judged queries.
void cmd_rerank(const Workspace& ws, PipelineMode mode);

/// <mode>/metrics.txt and <mode>/metrics.jsonl over the evaluation queries,
/// with columns ql, weak, model and smoothed variants.
std::vector<EvalResult> cmd_eval(const Workspace& ws, PipelineMode mode);

/// Comparison table over every completed mode in `run_dir`, followed by
/// per-query NDCG deltas of each model against QL.
std::string cmd_report(const std::string& run_dir);

struct PipelineResult {
  std::vector<EvalResult> results;
  /// The "model" column of `results`.
  EvalResult model;
  EvalResult weak;
  EvalResult ql;
};

/// Runs every stage for `mode` (indexing only when the run directory has no
/// index) and records the run in run_dir/manifest.json.
PipelineResult cmd_pipeline(const RunConfig& config, PipelineMode mode);

}  // namespace wsrank
