#include "safelens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "safelens/error.hpp"
#include "safelens/tensor_ops.hpp"

namespace safelens {

double attribution_entropy(const Tensor& scores, double delta) {
  if (delta <= 0) throw ContractError("attribution_entropy: delta must be > 0");
  const int64_t d = scores.numel();
  double total = 0.0;
  for (int64_t i = 0; i < d; ++i) total += std::abs(scores[i]);
  if (total == 0.0) return std::log(static_cast<double>(d));
  double h = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double p = std::abs(scores[i]) / total;
    h -= p * std::log(p + delta);
  }
  return std::max(0.0, h);
}

double attribution_entropy(const AttributionMap& a, double delta) {
  return attribution_entropy(a.scores, delta);
}

double attribution_drift(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ContractError("attribution_drift: map shapes differ, " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double attribution_drift(const AttributionMap& a, const AttributionMap& b) {
  return attribution_drift(a.scores, b.scores);
}

std::vector<int64_t> rank_units(const Tensor& scores, const Shape& input_shape) {
  std::vector<double> weight;
  if (input_shape.size() == 3 && input_shape[0] > 1) {
    // Channel-coupled pixels ranked by channel-summed |a|.
    const int64_t c = input_shape[0], hw = input_shape[1] * input_shape[2];
    weight.assign(static_cast<size_t>(hw), 0.0);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < hw; ++p) weight[static_cast<size_t>(p)] += std::abs(scores[ch * hw + p]);
  } else {
    weight.resize(static_cast<size_t>(scores.numel()));
    for (int64_t i = 0; i < scores.numel(); ++i) weight[static_cast<size_t>(i)] = std::abs(scores[i]);
  }
  std::vector<int64_t> order(weight.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return weight[static_cast<size_t>(a)] > weight[static_cast<size_t>(b)]; });
  return order;
}

namespace {

// Copies unit `u` (a scalar, or a whole pixel for multi-channel inputs) from
// `src` into `dst`.
void copy_unit(const Shape& shape, int64_t u, const Tensor& src, Tensor& dst) {
  if (shape.size() == 3 && shape[0] > 1) {
    const int64_t hw = shape[1] * shape[2];
    for (int64_t ch = 0; ch < shape[0]; ++ch) dst[ch * hw + u] = src[ch * hw + u];
  } else {
    dst[u] = src[u];
  }
}

Curve confidence_curve(const Model& m, const Tensor& start, const Tensor& fill,
                       const std::vector<int64_t>& order, int64_t target, int64_t steps) {
  if (steps < 2) throw ContractError("curve: steps must be >= 2");
  const int64_t units = static_cast<int64_t>(order.size());
  const int64_t points = steps + 1;
  Shape bs = start.shape();
  bs.insert(bs.begin(), points);
  Tensor batch = Tensor::uninit(bs, start.dtype());
  Curve curve;
  curve.fractions.resize(static_cast<size_t>(points));
  Tensor work = start;
  int64_t applied = 0;
  for (int64_t s = 0; s < points; ++s) {
    const double f = static_cast<double>(s) / static_cast<double>(steps);
    curve.fractions[static_cast<size_t>(s)] = f;
    const int64_t want = std::llround(f * static_cast<double>(units));
    for (; applied < want; ++applied) copy_unit(start.shape(), order[static_cast<size_t>(applied)], fill, work);
    std::copy(work.ptr(), work.ptr() + work.numel(), batch.ptr() + s * work.numel());
  }
  batch.seal("curve_batch");
  const Tensor probs = tk::softmax_rows(
      forward(m, batch).with_shape({points, m.meta.num_classes}));
  curve.confidences.resize(static_cast<size_t>(points));
  for (int64_t s = 0; s < points; ++s)
    curve.confidences[static_cast<size_t>(s)] = probs[s * m.meta.num_classes + target];
  return curve;
}

}  // namespace

Curve deletion_curve_ranked(const Model& m, const Tensor& x, const std::vector<int64_t>& order,
                            int64_t target, int64_t steps) {
  const Tensor zeros = Tensor::zeros(x.shape(), x.dtype());
  return confidence_curve(m, x, zeros, order, target, steps);
}

Curve insertion_curve_ranked(const Model& m, const Tensor& x, const std::vector<int64_t>& order,
                             int64_t target, int64_t steps) {
  const Tensor zeros = Tensor::zeros(x.shape(), x.dtype());
  return confidence_curve(m, zeros, x, order, target, steps);
}

Curve deletion_curve(const Model& m, const Tensor& x, const AttributionMap& a, int64_t steps) {
  return deletion_curve_ranked(m, x, rank_units(a.scores, x.shape()), a.target, steps);
}

Curve insertion_curve(const Model& m, const Tensor& x, const AttributionMap& a, int64_t steps) {
  return insertion_curve_ranked(m, x, rank_units(a.scores, x.shape()), a.target, steps);
}

double auc(const Curve& c) {
  if (c.fractions.size() != c.confidences.size() || c.fractions.size() < 2)
    throw ContractError("auc: malformed curve");
  double area = 0.0;
  for (size_t i = 1; i < c.fractions.size(); ++i) {
    const double df = c.fractions[i] - c.fractions[i - 1];
    if (df <= 0) throw ContractError("auc: fractions must be strictly increasing");
    area += 0.5 * df * (c.confidences[i] + c.confidences[i - 1]);
  }
  return area;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw ContractError("pearson: need two equal-length lists of size >= 2");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("pearson: zero variance makes correlation undefined");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace safelens
