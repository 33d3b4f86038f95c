#pragma once

#include <string>

#include "safelens/nn.hpp"

namespace safelens {

enum class BaselineKind { Zero, Blur, GaussianNoise, Uniform };
BaselineKind baseline_from_name(const std::string& name);
const char* baseline_name(BaselineKind k);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::Zero;
  int64_t blur_kernel = 5;   // odd box-filter width, edge replication
  double noise_sigma = 0.1;  // GaussianNoise standard deviation
};

// Zero -> zeros; Blur -> per-channel box filter of x; GaussianNoise ->
// clamp(N(0,sigma^2),0,1) drawn from mix_seed(seed,"baseline/gaussian");
// Uniform -> U(0,1) from mix_seed(seed,"baseline/uniform"). Always in [0,1].
Tensor make_baseline(const Tensor& x, const BaselineSpec& spec, uint64_t seed);

struct AttributionMap {
  Tensor scores;  // same shape as the input
  int64_t target = 0;
  std::string method;
  std::string baseline;
  int64_t samples = 0;  // Riemann steps m, or noise sample count N
  uint64_t seed = 0;
};

// Right-endpoint Riemann sum with m steps of the path integral from the
// baseline to x, on the raw target logit:
//   IG_i ~ (x_i - x'_i) * (1/m) * sum_{j=1..m} d f_t(x' + (j/m)(x-x')) / d x_i
AttributionMap integrated_gradients(const Model& m, const Tensor& x, const Tensor& baseline,
                                    int64_t steps, int64_t target);

// Raw gradient of the target logit.
AttributionMap saliency(const Model& m, const Tensor& x, int64_t target);

// Mean of elementwise-squared saliency over n Gaussian-perturbed copies of x
// (perturbed inputs are not clamped). Draw i uses the stream
// mix_seed(seed, "sg/draw", i), elements filled in flat order.
AttributionMap smoothgrad_sq(const Model& m, const Tensor& x, int64_t n, double sigma,
                             int64_t target, uint64_t seed);

// Per-sample input gradients of the summed target logits for a batch.
Tensor batch_input_gradients(const Model& m, const Tensor& batch,
                             const std::vector<int64_t>& targets);

}  // namespace safelens
