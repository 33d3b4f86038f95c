#include <benchmark/benchmark.h>

#include "safelens/rng.hpp"
#include "safelens/tensor_ops.hpp"

using namespace safelens;

namespace {

Tensor rand_t(Shape s, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::uninit(std::move(s));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1, 1);
  return t.seal("bench");
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  const Tensor a = rand_t({n, n}, 1), b = rand_t({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tk::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(256)->Arg(512);

void BM_Conv2dForwardBatch(benchmark::State& state) {
  const int64_t batch = state.range(0);
  const Tensor x = rand_t({batch, 1, 28, 28}, 3);
  const Tensor k = rand_t({16, 1, 3, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(tk::conv2d(x, k, 1, 1));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dForwardBatch)->Arg(32)->Arg(128);

void BM_Conv2dGradKernel(benchmark::State& state) {
  const int64_t batch = state.range(0);
  const Tensor x = rand_t({batch, 16, 28, 28}, 5);
  const Tensor k = rand_t({32, 16, 3, 3}, 6);
  const Tensor y = tk::conv2d(x, k, 2, 1);
  const Tensor g = rand_t(y.shape(), 7);
  for (auto _ : state)
    benchmark::DoNotOptimize(tk::conv2d_grad_kernel(g, x, k.shape(), 2, 1));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dGradKernel)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
