#pragma once

#include <vector>

#include "safelens/attribution.hpp"
#include "safelens/nn.hpp"

namespace safelens {

// Shannon entropy (natural log) of the L1-normalized absolute map:
// H = -sum p_i * log(p_i + delta), p = |a| / sum|a|. An all-zero map yields
// the maximal log(d); the result is clamped below at 0.
double attribution_entropy(const Tensor& scores, double delta = 1e-10);
double attribution_entropy(const AttributionMap& a, double delta = 1e-10);

// Euclidean norm of the raw (unnormalized) difference of two maps.
double attribution_drift(const Tensor& a, const Tensor& b);
double attribution_drift(const AttributionMap& a, const AttributionMap& b);

// Target-class confidence as ranked units are removed/restored. Fractions run
// 0, 1/steps, ..., 1.
struct Curve {
  std::vector<double> fractions;
  std::vector<double> confidences;
};

// Units are scalar features for single-channel inputs and whole pixels
// (channels coupled, ranked by channel-summed |a|) otherwise. Ties break by
// index for determinism.
std::vector<int64_t> rank_units(const Tensor& scores, const Shape& input_shape);

// Deletion: replace the top fraction of units with the zero baseline.
Curve deletion_curve(const Model& m, const Tensor& x, const AttributionMap& a, int64_t steps);
// Insertion: restore the top fraction of units onto the zero baseline.
Curve insertion_curve(const Model& m, const Tensor& x, const AttributionMap& a, int64_t steps);
// Same curves for an arbitrary unit order (e.g. a random-ranking oracle).
Curve deletion_curve_ranked(const Model& m, const Tensor& x, const std::vector<int64_t>& order,
                            int64_t target, int64_t steps);
Curve insertion_curve_ranked(const Model& m, const Tensor& x, const std::vector<int64_t>& order,
                             int64_t target, int64_t steps);

// Trapezoid rule over the fraction axis.
double auc(const Curve& c);

// Sample Pearson correlation; throws DomainError on zero variance.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace safelens
