#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "scratch.hpp"
#include "small_run.hpp"
#include "wsrank/pipeline.hpp"

using wsrank::testing::ScratchDir;
using wsrank::testing::slurp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

/// Runs the wsrank binary with `args`, capturing stdout.
Outcome wsrank_cli(const ScratchDir& dir, const std::string& args) {
  const std::string out = dir.file("stdout.txt");
  const std::string cmd = std::string("\"") + WSRANK_EXE + "\" --log-level off " + args + " > \"" +
                          out + "\" 2> \"" + dir.file("stderr.txt") + "\"";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  return o;
}

std::string write_config(const ScratchDir& dir, const std::string& name,
                         const std::string& run) {
  return dir.write(name, wsrank::dump_config(wsrank::testing::small_run(dir.file(run))));
}

}  // namespace

TEST_CASE("usage errors exit with the configuration code") {
  ScratchDir dir("cli-usage");
  CHECK(wsrank_cli(dir, "--help").code == 0);
  CHECK(wsrank_cli(dir, "").code == 2);
  CHECK(wsrank_cli(dir, "frobnicate").code == 2);
  CHECK(wsrank_cli(dir, "index -c " + dir.file("missing.json")).code == 2);
  const auto bad = dir.write("bad.json", R"({"run_dir": "r", "synthetic": {}, "extra": 1})");
  CHECK(wsrank_cli(dir, "index -c " + bad).code == 2);
  const auto broken = dir.write("broken.json", "{");
  CHECK(wsrank_cli(dir, "config -c " + broken).code == 2);
  const auto cfg = write_config(dir, "ok.json", "run");
  CHECK(wsrank_cli(dir, "train -c " + cfg + " -m sideways").code == 2);
  CHECK(wsrank_cli(dir, "eval --run " + cfg).code == 2);
}

TEST_CASE("stage failures exit with the stage code") {
  ScratchDir dir("cli-stage");
  const auto cfg = write_config(dir, "cfg.json", "run");
  CHECK(wsrank_cli(dir, "rank -c " + cfg).code == 10);
  CHECK(wsrank_cli(dir, "report " + dir.file("nowhere")).code == 18);

  const auto idx = wsrank_cli(dir, "index -c " + cfg);
  CHECK(idx.code == 0);
  CHECK(idx.out.find("documents 600") != std::string::npos);
  CHECK(wsrank_cli(dir, "fit-labels -c " + cfg).code == 13);
  CHECK(wsrank_cli(dir, "train -c " + cfg + " -m rank").code == 14);
  CHECK(wsrank_cli(dir, "influence -c " + cfg).code == 15);
  CHECK(wsrank_cli(dir, "rerank -c " + cfg + " -m rank").code == 16);
  CHECK(wsrank_cli(dir, "eval -c " + cfg + " -m rank").code == 17);
  CHECK(wsrank_cli(dir, "report " + dir.file("run")).code == 18);
}

TEST_CASE("stage by stage matches the pipeline command") {
  ScratchDir dir("cli-stages");
  const auto staged = write_config(dir, "staged.json", "staged");
  const auto whole = write_config(dir, "whole.json", "whole");
  for (const std::string step :
       {"index", "rank", "gen-weak", "fit-labels", "train -m noise-aware",
        "rerank -m noise-aware", "eval -m noise-aware"}) {
    const auto verb = step.substr(0, step.find(' '));
    const auto rest = step.size() > verb.size() ? step.substr(verb.size()) : std::string();
    CHECK_MESSAGE(wsrank_cli(dir, verb + " -c " + staged + rest).code == 0, step);
  }
  const auto p = wsrank_cli(dir, "pipeline -c " + whole + " -m noise-aware");
  CHECK(p.code == 0);
  CHECK(p.out.find("NDCG@10") != std::string::npos);
  CHECK(slurp(dir.path() / "staged" / "noise-aware" / "metrics.jsonl") ==
        slurp(dir.path() / "whole" / "noise-aware" / "metrics.jsonl"));

  const auto rep = wsrank_cli(dir, "report " + dir.file("whole"));
  CHECK(rep.code == 0);
  CHECK(rep.out.find("noise-aware") != std::string::npos);

  const auto single = wsrank_cli(dir, "eval --run " + dir.file("whole/runs/ql.trec") +
                                          " --qrels " + dir.file("whole/data/qrels.txt"));
  CHECK(single.code == 0);
  CHECK(single.out.find("ql") != std::string::npos);

  const auto shown = wsrank_cli(dir, "config -c " + dir.file("whole/manifest.json"));
  CHECK(shown.code == 0);
  CHECK(wsrank::parse_config(shown.out).synthetic->num_docs == 600);
}

TEST_CASE("pipeline for every mode") {
  ScratchDir dir("cli-all");
  const auto cfg = write_config(dir, "cfg.json", "run");
  const auto all = wsrank_cli(dir, "pipeline -c " + cfg + " -m all");
  CHECK(all.code == 0);
  for (const char* col : {"rank", "noise-aware", "influence-aware", "delta vs ql"}) {
    CHECK_MESSAGE(all.out.find(col) != std::string::npos, col);
  }
  const auto moved = wsrank_cli(dir, "pipeline -c " + cfg + " --run-dir " + dir.file("moved") +
                                         " -m rank");
  CHECK(moved.code == 0);
  CHECK(slurp(dir.path() / "run" / "rank" / "metrics.txt") ==
        slurp(dir.path() / "moved" / "rank" / "metrics.txt"));
}
