// wsrank: weakly supervised neural ranking pipeline.
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "wsrank/pipeline.hpp"

namespace {

using namespace wsrank;

struct Common {
  std::string config_path;
  std::string run_dir;

  RunConfig load() const {
    RunConfig c = load_config(config_path);
    if (!run_dir.empty()) c.run_dir = run_dir;
    c.validate();
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("-c,--config", common.config_path, "JSON run configuration or manifest")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--run-dir", common.run_dir, "Override the configured run directory");
}

PipelineMode mode_of(const std::string& s) {
  try {
    return parse_pipeline_mode(s);
  } catch (const std::exception& e) {
    throw StageError(Stage::Config, e.what());
  }
}

void print_results(const std::vector<EvalResult>& results) {
  std::cout << format_metrics_table(results);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised neural ranking: weak labels, label model, influence filtering"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  Common common;
  std::string mode_name = "rank";
  const std::vector<std::string> modes{"rank", "noise-aware", "influence-aware"};

  auto* index = app.add_subcommand("index", "Materialize the corpus and build the index");
  add_common(index, common);
  auto* rank = app.add_subcommand("rank", "Write QL and weak-source runs for judged queries");
  add_common(rank, common);
  auto* gen_weak = app.add_subcommand("gen-weak", "Generate weak pairs and the label matrix");
  add_common(gen_weak, common);
  auto* fit_labels = app.add_subcommand("fit-labels", "Fit the label model and write soft labels");
  add_common(fit_labels, common);
  auto* train = app.add_subcommand("train", "Train a ranker for one mode");
  add_common(train, common);
  train->add_option("-m,--mode", mode_name, "rank, noise-aware or influence-aware")
      ->check(CLI::IsMember(modes));
  auto* influence = app.add_subcommand("influence", "Score pairs by influence, filter, retrain");
  add_common(influence, common);
  auto* rerank = app.add_subcommand("rerank", "Rerank QL candidates with a trained model");
  add_common(rerank, common);
  rerank->add_option("-m,--mode", mode_name, "rank, noise-aware or influence-aware")
      ->check(CLI::IsMember(modes));

  auto* eval = app.add_subcommand("eval", "Evaluate runs of a mode, or a single run file");
  std::string run_file, qrels_file;
  std::size_t k = 10;
  eval->add_option("-c,--config", common.config_path, "JSON run configuration or manifest")
      ->check(CLI::ExistingFile);
  eval->add_option("--run-dir", common.run_dir, "Override the configured run directory");
  eval->add_option("-m,--mode", mode_name, "rank, noise-aware or influence-aware")
      ->check(CLI::IsMember(modes));
  eval->add_option("--run", run_file, "TREC run file")->check(CLI::ExistingFile);
  eval->add_option("--qrels", qrels_file, "TREC qrels file")->check(CLI::ExistingFile);
  eval->add_option("-k", k, "Metric cutoff")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Compare completed modes of a run directory");
  std::string report_dir;
  report->add_option("run_dir", report_dir, "Run directory")->required();

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage for one or all modes");
  add_common(pipeline, common);
  pipeline->add_option("-m,--mode", mode_name, "rank, noise-aware, influence-aware or all")
      ->check(CLI::IsMember({"rank", "noise-aware", "influence-aware", "all"}));

  auto* config_cmd = app.add_subcommand("config", "Print the effective configuration");
  add_common(config_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : exit_code(Stage::Config);
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");

  try {
    if (*index) {
      const IndexStats st = cmd_index(common.load());
      std::cout << "documents " << st.documents << "\nvocabulary " << st.vocabulary
                << "\ntokens " << st.tokens << "\nqueries " << st.queries << "\ntrain_queries "
                << st.train_queries << '\n';
    } else if (*rank) {
      cmd_rank(Workspace(common.load()));
    } else if (*gen_weak) {
      const auto s = cmd_gen_weak(Workspace(common.load()));
      std::cout << "pairs " << s.pairs << "\nqueries " << s.queries << '\n';
    } else if (*fit_labels) {
      const auto t = cmd_fit_labels(Workspace(common.load()));
      std::cout << "objective " << t.initial_objective << " -> " << t.final_objective << '\n';
    } else if (*train) {
      const auto s = cmd_train(Workspace(common.load()), mode_of(mode_name));
      std::cout << "pairs " << s.examples << "\nbest_epoch " << s.trace.best_epoch << '\n';
    } else if (*influence) {
      const auto s = cmd_influence(Workspace(common.load()));
      std::cout << "dropped_fraction " << s.retrain.dropped_fraction << '\n';
    } else if (*rerank) {
      cmd_rerank(Workspace(common.load()), mode_of(mode_name));
    } else if (*eval) {
      if (!run_file.empty()) {
        if (qrels_file.empty()) throw StageError(Stage::Config, "--run requires --qrels");
        const Qrels gold = to_qrels(read_qrels(qrels_file));
        const auto run = read_trec_run(run_file);
        std::vector<std::string> ids;
        for (const auto& [qid, grades] : gold) ids.push_back(qid);
        print_results({evaluate_run(std::filesystem::path(run_file).stem().string(), run, ids,
                                    gold, k)});
      } else {
        if (common.config_path.empty()) {
          throw StageError(Stage::Config, "eval needs --config or --run/--qrels");
        }
        print_results(cmd_eval(Workspace(common.load()), mode_of(mode_name)));
      }
    } else if (*report) {
      std::cout << cmd_report(report_dir);
    } else if (*pipeline) {
      const RunConfig cfg = common.load();
      if (mode_name == "all") {
        for (const auto& m : modes) cmd_pipeline(cfg, parse_pipeline_mode(m));
        std::cout << cmd_report(cfg.run_dir);
      } else {
        print_results(cmd_pipeline(cfg, mode_of(mode_name)).results);
      }
    } else if (*config_cmd) {
      std::cout << dump_config(common.load()) << '\n';
    }
  } catch (const StageError& e) {
    spdlog::error("{}", e.what());
    return exit_code(e.stage());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
