// Parallel vs serial reference kernels on a large grid.
#include <benchmark/benchmark.h>

#include "climemu/grid.hpp"
#include "climemu/rng.hpp"

using namespace climemu;

namespace {

Field random_field(const GridPtr& g, std::uint64_t seed) {
  Field f{g, "tas", std::nullopt, std::vector<double>(g->n_lat() * g->n_lon())};
  Rng rng(seed);
  for (double& x : f.values) x = rng.normal();
  return f;
}

void bm_global_mean_parallel(benchmark::State& state) {
  const auto g = make_regular_grid(360, 720);
  const Field f = random_field(g, 1);
  for (auto _ : state) benchmark::DoNotOptimize(global_mean(*g, f.values));
}
BENCHMARK(bm_global_mean_parallel);

void bm_global_mean_serial(benchmark::State& state) {
  const auto g = make_regular_grid(360, 720);
  const Field f = random_field(g, 1);
  for (auto _ : state) benchmark::DoNotOptimize(serial::global_mean(*g, f.values));
}
BENCHMARK(bm_global_mean_serial);

void bm_regrid_parallel(benchmark::State& state) {
  const auto src = make_regular_grid(360, 720);
  const auto dst = make_regular_grid(96, 192);
  const RegridPlan plan = make_regrid_plan(src, dst);
  const Field f = random_field(src, 2);
  for (auto _ : state) benchmark::DoNotOptimize(apply_regrid(plan, f));
}
BENCHMARK(bm_regrid_parallel);

void bm_regrid_serial(benchmark::State& state) {
  const auto src = make_regular_grid(360, 720);
  const auto dst = make_regular_grid(96, 192);
  const RegridPlan plan = make_regrid_plan(src, dst);
  const Field f = random_field(src, 2);
  for (auto _ : state) benchmark::DoNotOptimize(serial::apply_regrid(plan, f));
}
BENCHMARK(bm_regrid_serial);

}  // namespace

BENCHMARK_MAIN();
