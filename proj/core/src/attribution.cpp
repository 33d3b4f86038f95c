#include "safelens/attribution.hpp"

#include <algorithm>

#include "safelens/error.hpp"
#include "safelens/rng.hpp"
#include "safelens/tensor_ops.hpp"

namespace safelens {

BaselineKind baseline_from_name(const std::string& name) {
  if (name == "zero") return BaselineKind::Zero;
  if (name == "blur") return BaselineKind::Blur;
  if (name == "gaussian") return BaselineKind::GaussianNoise;
  if (name == "uniform") return BaselineKind::Uniform;
  throw ConfigError("unknown baseline '" + name + "' (expected zero/blur/gaussian/uniform)");
}

const char* baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::Zero: return "zero";
    case BaselineKind::Blur: return "blur";
    case BaselineKind::GaussianNoise: return "gaussian";
    case BaselineKind::Uniform: return "uniform";
  }
  return "?";
}

namespace {

Tensor box_blur(const Tensor& x, int64_t kernel) {
  if (kernel < 1 || kernel % 2 == 0)
    throw ContractError("make_baseline: blur kernel must be odd and positive, got " +
                        std::to_string(kernel));
  if (x.rank() != 3) throw DimensionError("make_baseline: blur expects [C,H,W]");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t half = kernel / 2;
  Tensor out = Tensor::uninit(x.shape(), x.dtype());
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* src = x.ptr() + ch * h * w;
    double* dst = out.ptr() + ch * h * w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double s = 0.0;
        for (int64_t a = -half; a <= half; ++a) {
          const int64_t ii = std::clamp<int64_t>(i + a, 0, h - 1);  // edge replication
          for (int64_t b = -half; b <= half; ++b) {
            const int64_t jj = std::clamp<int64_t>(j + b, 0, w - 1);
            s += src[ii * w + jj];
          }
        }
        dst[i * w + j] = s * inv;
      }
  }
  return out.seal("box_blur");
}

}  // namespace

Tensor make_baseline(const Tensor& x, const BaselineSpec& spec, uint64_t seed) {
  switch (spec.kind) {
    case BaselineKind::Zero:
      return Tensor::zeros(x.shape(), x.dtype());
    case BaselineKind::Blur:
      return box_blur(x, spec.blur_kernel);
    case BaselineKind::GaussianNoise: {
      Rng rng(mix_seed(seed, "baseline/gaussian"));
      Tensor t = Tensor::uninit(x.shape(), x.dtype());
      for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = std::min(1.0, std::max(0.0, rng.normal(0.0, spec.noise_sigma)));
      return t.seal("baseline_gaussian");
    }
    case BaselineKind::Uniform: {
      Rng rng(mix_seed(seed, "baseline/uniform"));
      Tensor t = Tensor::uninit(x.shape(), x.dtype());
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
      return t.seal("baseline_uniform");
    }
  }
  throw ContractError("make_baseline: unknown kind");
}

Tensor batch_input_gradients(const Model& m, const Tensor& batch,
                             const std::vector<int64_t>& targets) {
  const auto params = lift_params(m, false);
  const auto xv = ag::var(batch);
  const auto logits = forward_graph(m, params, xv);
  // Rows are independent, so the gradient of the summed picked logits holds
  // each row's own gradient.
  const auto picked = ag::gather_rows(logits, targets);
  const auto grads = ag::backward(ag::sum_all(picked), {xv});
  return ag::grad_or_zeros(grads[0], xv);
}

AttributionMap integrated_gradients(const Model& m, const Tensor& x, const Tensor& baseline,
                                    int64_t steps, int64_t target) {
  if (steps < 1) throw ContractError("integrated_gradients: m must be >= 1");
  if (!x.same_shape(baseline))
    throw DimensionError("integrated_gradients: baseline shape " + shape_str(baseline.shape()) +
                         " != input shape " + shape_str(x.shape()));
  if (target < 0 || target >= m.meta.num_classes)
    throw ContractError("integrated_gradients: target out of range");
  const int64_t d = x.numel();
  Shape bs = adapt_input(m, x).shape();
  bs.insert(bs.begin(), steps);
  Tensor points = Tensor::uninit(bs, x.dtype());
  for (int64_t j = 1; j <= steps; ++j) {
    const double t = static_cast<double>(j) / static_cast<double>(steps);
    double* dst = points.ptr() + (j - 1) * d;
    for (int64_t i = 0; i < d; ++i) dst[i] = baseline[i] + t * (x[i] - baseline[i]);
  }
  points.seal("ig_points");
  const Tensor grads = batch_input_gradients(m, points, std::vector<int64_t>(steps, target));
  Shape keep = bs;
  keep[0] = 1;
  Tensor avg = tk::mul_scalar(tk::sum_to(grads, keep), 1.0 / static_cast<double>(steps))
                   .with_shape(x.shape());
  AttributionMap out;
  out.scores = tk::mul(tk::sub(x, baseline), avg);
  out.target = target;
  out.method = "ig";
  out.samples = steps;
  return out;
}

AttributionMap saliency(const Model& m, const Tensor& x, int64_t target) {
  if (target < 0 || target >= m.meta.num_classes) throw ContractError("saliency: target out of range");
  Shape bs = adapt_input(m, x).shape();
  bs.insert(bs.begin(), 1);
  const Tensor grads = batch_input_gradients(m, x.with_shape(bs), {target});
  AttributionMap out;
  out.scores = grads.with_shape(x.shape());
  out.target = target;
  out.method = "saliency";
  out.samples = 1;
  return out;
}

AttributionMap smoothgrad_sq(const Model& m, const Tensor& x, int64_t n, double sigma,
                             int64_t target, uint64_t seed) {
  if (n < 1) throw ContractError("smoothgrad_sq: N must be >= 1");
  if (sigma < 0) throw ContractError("smoothgrad_sq: sigma must be >= 0");
  const int64_t d = x.numel();
  Shape bs = adapt_input(m, x).shape();
  bs.insert(bs.begin(), n);
  Tensor points = Tensor::uninit(bs, x.dtype());
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, "sg/draw", static_cast<uint64_t>(i)));
    double* dst = points.ptr() + i * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = x[j] + rng.normal(0.0, sigma);
  }
  points.seal("sg_points");
  const Tensor grads = batch_input_gradients(m, points, std::vector<int64_t>(n, target));
  const Tensor sq = tk::mul(grads, grads);
  Shape keep = bs;
  keep[0] = 1;
  AttributionMap out;
  out.scores = tk::mul_scalar(tk::sum_to(sq, keep), 1.0 / static_cast<double>(n)).with_shape(x.shape());
  out.target = target;
  out.method = "smoothgrad_sq";
  out.samples = n;
  out.seed = seed;
  return out;
}

}  // namespace safelens
