#include <benchmark/benchmark.h>

#include "safelens/bounds.hpp"
#include "safelens/data.hpp"

using namespace safelens;

namespace {

void BM_IbpCertify(benchmark::State& state) {
  const Model m = build_simple_cnn({1, 28, 28}, 10, 7);
  const Dataset ds = make_synthetic(4, 4, {1, 28, 28}, 11, "test");
  const Tensor x = ds.image(0);
  const int64_t y = predict_one(m, x);
  for (auto _ : state) benchmark::DoNotOptimize(ibp_certify(m, x, 0.05, y));
}
BENCHMARK(BM_IbpCertify);

void BM_CrownIbpCertify(benchmark::State& state) {
  const Model m = build_simple_cnn({1, 28, 28}, 10, 7);
  const Dataset ds = make_synthetic(4, 4, {1, 28, 28}, 11, "test");
  const Tensor x = ds.image(0);
  const int64_t y = predict_one(m, x);
  for (auto _ : state) benchmark::DoNotOptimize(crown_ibp_certify(m, x, 0.05, y));
}
BENCHMARK(BM_CrownIbpCertify);

}  // namespace
