#include <benchmark/benchmark.h>

#include "wsrank/labelmodel.hpp"
#include "wsrank/random.hpp"

namespace {

using namespace wsrank;

LabelMatrix votes(std::size_t k, std::size_t m) {
  Rng rng(3);
  LabelMatrix out;
  for (std::size_t j = 0; j < k; ++j) out.ranker_tags.push_back("r" + std::to_string(j));
  out.rows = m;
  for (std::size_t i = 0; i < k * m; ++i) {
    out.values.push_back(static_cast<std::int8_t>(static_cast<int>(rng.below(3)) - 1));
  }
  return out;
}

Eigen::VectorXd weights(std::size_t k) {
  Rng rng(4);
  Eigen::VectorXd w(static_cast<Eigen::Index>(label_model_dim(k, true)));
  for (auto& v : w) v = 0.3 * rng.normal();
  return w;
}

void BM_ExactGradient(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto v = votes(k, 20000);
  const auto w = weights(k);
  for (auto _ : state) benchmark::DoNotOptimize(log_marginal_likelihood_gradient(w, v));
}
BENCHMARK(BM_ExactGradient)->Arg(3)->Arg(4)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_GibbsExpectation(benchmark::State& state) {
  const auto w = weights(4);
  const auto samples = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(gibbs_model_expectation(w, 4, samples, 100, 1));
}
BENCHMARK(BM_GibbsExpectation)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_Fit(benchmark::State& state) {
  const auto v = votes(4, 20000);
  LabelModelOptions opts;
  opts.epochs = 100;
  for (auto _ : state) benchmark::DoNotOptimize(fit_label_model(v, opts));
}
BENCHMARK(BM_Fit)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
