#include "cpat/evaluation.hpp"

#include <benchmark/benchmark.h>

#include <map>

namespace {

using namespace cpat;

struct Fixture {
  World world;
  Corpus corpus;
  ModelParams params;

  explicit Fixture(Eigen::Index vocab) : world(make_world(vocab)) {
    RngStream corpus_rng = rng_new(2);
    corpus = generate_corpus(world, corpus_rng, 500, 10);
    TrainConfig config;
    params = initial_params(world.table, config);
  }

  static World make_world(Eigen::Index vocab) {
    RngStream rng = rng_new(1);
    return build_world(rng, ModelDims{vocab, 50, 8, 64, 64}, 0.5);
  }
};

const Fixture& fixture(Eigen::Index vocab) {
  static std::map<Eigen::Index, Fixture> cache;
  auto it = cache.find(vocab);
  if (it == cache.end()) it = cache.emplace(vocab, Fixture(vocab)).first;
  return it->second;
}

void BM_MinibatchObjective(benchmark::State& state) {
  const Fixture& f = fixture(state.range(0));
  const std::span<const TokenSequence> batch(f.corpus.sequences);
  RngStream rng = rng_new(3);
  for (auto _ : state) benchmark::DoNotOptimize(minibatch_objective(f.params, f.world.table, batch, rng, 5, true));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_MinibatchObjective)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_OracleTransition(benchmark::State& state) {
  const Fixture& f = fixture(state.range(0));
  RngStream rng = rng_new(4);
  for (auto _ : state) benchmark::DoNotOptimize(oracle_transition(f.world, 2000, rng));
}
BENCHMARK(BM_OracleTransition)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_ModelTransitionMatrix(benchmark::State& state) {
  const Fixture& f = fixture(state.range(0));
  RngStream rng = rng_new(5);
  for (auto _ : state)
    benchmark::DoNotOptimize(model_transition_matrix(f.params, f.world.table, 2000, rng, PerturbMode::kPerturbed));
}
BENCHMARK(BM_ModelTransitionMatrix)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
