#include <benchmark/benchmark.h>

#include "safelens/attribution.hpp"
#include "safelens/data.hpp"

using namespace safelens;

namespace {

void BM_IntegratedGradients(benchmark::State& state) {
  const int64_t steps = state.range(0);
  const Model m = build_simple_cnn({1, 28, 28}, 10, 7);
  const Dataset ds = make_synthetic(2, 4, {1, 28, 28}, 13, "test");
  const Tensor x = ds.image(0);
  const Tensor baseline = make_baseline(x, {BaselineKind::Zero}, 0);
  const int64_t target = predict_one(m, x);
  for (auto _ : state)
    benchmark::DoNotOptimize(integrated_gradients(m, x, baseline, steps, target));
  state.SetItemsProcessed(state.iterations() * steps);
}
BENCHMARK(BM_IntegratedGradients)->Arg(16)->Arg(64);

}  // namespace
