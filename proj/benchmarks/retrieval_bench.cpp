#include <benchmark/benchmark.h>

#include "wsrank/corpus.hpp"
#include "wsrank/rankers.hpp"

namespace {

using namespace wsrank;

struct World {
  SyntheticWorld world = generate_synthetic({});
  InvertedIndex index = build_index(world.docs);
};

const World& world() {
  static const World w;
  return w;
}

void BM_BuildIndex(benchmark::State& state) {
  const auto& docs = world().world.docs;
  for (auto _ : state) benchmark::DoNotOptimize(build_index(docs));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}
BENCHMARK(BM_BuildIndex)->Unit(benchmark::kMillisecond);

void BM_TopK(benchmark::State& state) {
  const auto method = static_cast<RankerMethod>(state.range(0));
  const auto& w = world();
  std::size_t q = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        retrieve_topk(w.index, w.world.queries[q++ % w.world.queries.size()], 100, method));
  }
  state.SetLabel(std::string(to_string(method)));
}
BENCHMARK(BM_TopK)
    ->Arg(static_cast<int>(RankerMethod::Bm25))
    ->Arg(static_cast<int>(RankerMethod::TfIdf))
    ->Arg(static_cast<int>(RankerMethod::QueryLikelihood))
    ->Arg(static_cast<int>(RankerMethod::Rm3))
    ->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
