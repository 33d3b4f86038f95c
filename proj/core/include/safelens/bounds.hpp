#pragma once

#include <optional>
#include <string>
#include <vector>

#include "safelens/data.hpp"
#include "safelens/nn.hpp"

namespace safelens {

// Elementwise lower/upper tensor pair. lower <= upper always.
struct Interval {
  Tensor lower, upper;

  Interval() = default;
  Interval(Tensor lo, Tensor hi);  // validates the ordering
  const Shape& shape() const { return lower.shape(); }
};

// B_eps(x) intersected with the pixel range [0,1].
Interval input_box(const Tensor& x, double eps);

// Intervals after every layer for one (unbatched) sample.
struct IbpTrace {
  Interval input;
  std::vector<Interval> outputs;
};

// Center-radius interval propagation. Affine layers map (mu,r) to
// (W mu + b, |W| r); ReLU maps [l,u] to [relu(l),relu(u)]; AvgPool is affine;
// ResidualAdd adds intervals. Throws CapabilityError on unsupported kinds.
IbpTrace ibp_propagate(const Model& m, const Interval& in);

enum class VerifyStatus { Certified, Falsified, Unknown };
const char* verify_status_name(VerifyStatus s);

struct VerifyResult {
  VerifyStatus status = VerifyStatus::Unknown;
  std::optional<Tensor> counterexample;
  // Lower bound of (logit_yhat - logit_j) per class j; +inf at j = yhat.
  std::vector<double> margin_lower;

  double min_margin() const;
};

// Certified iff every margin lower bound is positive, with margins bounded in
// row-difference form through the final Dense layer. Never Falsified.
VerifyResult ibp_certify(const Model& m, const Tensor& x, double eps, int64_t y_hat);

// Wraps an adversarial counterexample as a Falsified result. Re-checks that
// the point lies inside B_eps(x) within [0,1] and is misclassified; throws
// ContractError otherwise.
VerifyResult falsified_result(const Model& m, const Tensor& x, double eps, int64_t y_hat,
                              Tensor counterexample);

// Affine lower/upper bounding functions of the flattened network input, one
// row per class margin (classes ascending, predicted class skipped).
struct LinearBounds {
  Tensor A_low, b_low, A_up, b_up;  // A: [rows, d_in], b: [rows]
  std::vector<int64_t> row_class;   // class j bounded by each row
};

// Backward substitution from the margin rows through the network, relaxing
// unstable ReLUs (l<0<u) with the upper chord and an adaptive 0/1 lower
// slope; `trace` supplies the pre-activation intervals.
LinearBounds crown_backward(const Model& m, const IbpTrace& trace, int64_t y_hat);

// Concrete optimum of the affine bounds over the trace's input box.
std::vector<double> concretize_lower(const LinearBounds& lb, const Interval& box);
std::vector<double> concretize_upper(const LinearBounds& lb, const Interval& box);

VerifyResult crown_ibp_certify(const Model& m, const Tensor& x, double eps, int64_t y_hat);

enum class VerifyMethod { IBP, CrownIBP };
VerifyMethod verify_method_from_name(const std::string& name);
const char* verify_method_name(VerifyMethod m);

VerifyResult certify(const Model& m, const Tensor& x, double eps, int64_t y_hat, VerifyMethod method);

// Fraction of `ds` certified at radius eps. Throws ContractError when empty.
double verified_rate(const Model& m, const Dataset& ds, double eps, VerifyMethod method);

}  // namespace safelens
