#include <benchmark/benchmark.h>

#include "detdb/engine.hpp"
#include "detdb/workloads.hpp"

namespace {

using namespace detdb;

void BM_RunBatch(benchmark::State& state) {
  WorkloadSpec spec;
  spec.kind = WorkloadKind::kYcsbA;
  spec.keys_per_partition = 10000;
  spec.zipf_theta = static_cast<double>(state.range(1)) / 1000.0;
  spec.rng_seed = 5;
  spec.normalize();
  EngineConfig cfg;
  cfg.protocol = static_cast<Protocol>(state.range(0));
  cfg.batch_size = 500;
  MvStore store(workload_schema(spec));
  populate_store(store, spec);
  std::uint64_t epoch = 0;
  std::size_t committed = 0;
  for (auto _ : state) {
    state.PauseTiming();
    auto batch = gen_batch(spec, 500, epoch++);
    state.ResumeTiming();
    committed += run_batch(cfg, store, nullptr, batch).committed();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(committed));
  state.SetLabel(to_string(cfg.protocol));
}
BENCHMARK(BM_RunBatch)
    ->Args({static_cast<int>(Protocol::kPredictive), 0})
    ->Args({static_cast<int>(Protocol::kPredictive), 900})
    ->Args({static_cast<int>(Protocol::kAria), 0})
    ->Args({static_cast<int>(Protocol::kAria), 900})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
