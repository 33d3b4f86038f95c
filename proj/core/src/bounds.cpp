#include "safelens/bounds.hpp"

#include <cmath>
#include <limits>

#include "safelens/error.hpp"
#include "safelens/tensor_ops.hpp"
#include "safelens/thread_pool.hpp"

namespace safelens {

Interval::Interval(Tensor lo, Tensor hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (!lower.same_shape(upper)) throw DimensionError("Interval: bound shapes differ");
  for (int64_t i = 0; i < lower.numel(); ++i)
    if (lower[i] > upper[i])
      throw ContractError("Interval: lower > upper at flat index " + std::to_string(i));
}

Interval input_box(const Tensor& x, double eps) {
  if (eps < 0) throw ContractError("input_box: eps must be >= 0");
  return {tk::clamp(tk::add_scalar(x, -eps), 0.0, 1.0), tk::clamp(tk::add_scalar(x, eps), 0.0, 1.0)};
}

namespace {

Interval affine_dense(const Interval& in, const Tensor& w, const Tensor& b) {
  // in: [d]; w: [d,out]; center-radius rule.
  const int64_t d = in.lower.numel();
  const Tensor mu = tk::mul_scalar(tk::add(in.lower, in.upper), 0.5).with_shape({1, d});
  const Tensor rad = tk::mul_scalar(tk::sub(in.upper, in.lower), 0.5).with_shape({1, d});
  const Tensor center = tk::add(tk::matmul(mu, w), b.with_shape({1, b.numel()}));
  const Tensor radius = tk::matmul(rad, tk::abs(w));
  const int64_t out = w.dim(1);
  return {tk::sub(center, radius).with_shape({out}), tk::add(center, radius).with_shape({out})};
}

Interval affine_conv(const Interval& in, const LayerSpec& l, const Tensor& w, const Tensor& b) {
  const Tensor mu = tk::mul_scalar(tk::add(in.lower, in.upper), 0.5);
  const Tensor rad = tk::mul_scalar(tk::sub(in.upper, in.lower), 0.5);
  Tensor center = tk::conv2d(mu, w, l.stride, l.padding);
  center = tk::add(center, b.with_shape({l.out_channels, 1, 1}));
  const Tensor radius = tk::conv2d(rad, tk::abs(w), l.stride, l.padding);
  return {tk::sub(center, radius), tk::add(center, radius)};
}

}  // namespace

IbpTrace ibp_propagate(const Model& m, const Interval& in) {
  if (in.shape() != m.meta.input_shape)
    throw DimensionError("ibp_propagate: box shape " + shape_str(in.shape()) +
                         " does not match model input " + shape_str(m.meta.input_shape));
  IbpTrace trace;
  trace.input = in;
  Interval cur = in;
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    switch (l.kind) {
      case LayerKind::Dense:
        cur = affine_dense(cur, m.params[i].at("weight"), m.params[i].at("bias"));
        break;
      case LayerKind::Conv2d:
        cur = affine_conv(cur, l, m.params[i].at("weight"), m.params[i].at("bias"));
        break;
      case LayerKind::ReLU:
        cur = {tk::relu(cur.lower), tk::relu(cur.upper)};
        break;
      case LayerKind::Flatten:
        cur = {cur.lower.with_shape({cur.lower.numel()}), cur.upper.with_shape({cur.upper.numel()})};
        break;
      case LayerKind::AvgPool:
        cur = {tk::avg_pool(cur.lower, l.window), tk::avg_pool(cur.upper, l.window)};
        break;
      case LayerKind::ResidualAdd: {
        const Interval& src = l.skip_from == -1 ? trace.input : trace.outputs[static_cast<size_t>(l.skip_from)];
        cur = {tk::add(cur.lower, src.lower), tk::add(cur.upper, src.upper)};
        break;
      }
      default:
        throw CapabilityError(std::string("ibp_propagate: unsupported layer kind at index ") +
                              std::to_string(i));
    }
    trace.outputs.push_back(cur);
  }
  return trace;
}

const char* verify_status_name(VerifyStatus s) {
  switch (s) {
    case VerifyStatus::Certified: return "certified";
    case VerifyStatus::Falsified: return "falsified";
    case VerifyStatus::Unknown: return "unknown";
  }
  return "unknown";
}

double VerifyResult::min_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (double v : margin_lower) m = std::min(m, v);
  return m;
}

namespace {

// Margin lower bounds in row-difference form: the final Dense weights are
// collapsed to w_yhat - w_j and evaluated against the last hidden interval.
std::vector<double> ibp_margin_lower(const Model& m, const IbpTrace& trace, int64_t y_hat) {
  const int64_t k = m.meta.num_classes;
  std::vector<double> margins(static_cast<size_t>(k), std::numeric_limits<double>::infinity());
  const size_t last = m.layers.size() - 1;
  if (m.layers[last].kind == LayerKind::Dense) {
    const Interval& hin = m.layers.size() >= 2 ? trace.outputs[last - 1] : trace.input;
    const Tensor& w = m.params[last].at("weight");  // [d,k]
    const Tensor& b = m.params[last].at("bias");
    const int64_t d = w.dim(0);
    for (int64_t j = 0; j < k; ++j) {
      if (j == y_hat) continue;
      double lb = b[y_hat] - b[j];
      for (int64_t i = 0; i < d; ++i) {
        const double c = w[i * k + y_hat] - w[i * k + j];
        lb += c >= 0 ? c * hin.lower[i] : c * hin.upper[i];
      }
      margins[static_cast<size_t>(j)] = lb;
    }
  } else {
    const Interval& out = trace.outputs.back();
    for (int64_t j = 0; j < k; ++j) {
      if (j == y_hat) continue;
      margins[static_cast<size_t>(j)] = out.lower[y_hat] - out.upper[j];
    }
  }
  return margins;
}

VerifyResult margins_to_result(std::vector<double> margins, int64_t y_hat) {
  VerifyResult res;
  res.margin_lower = std::move(margins);
  bool all_pos = true;
  for (size_t j = 0; j < res.margin_lower.size(); ++j)
    if (static_cast<int64_t>(j) != y_hat && res.margin_lower[j] <= 0) all_pos = false;
  res.status = all_pos ? VerifyStatus::Certified : VerifyStatus::Unknown;
  return res;
}

}  // namespace

VerifyResult ibp_certify(const Model& m, const Tensor& x, double eps, int64_t y_hat) {
  const IbpTrace trace = ibp_propagate(m, input_box(adapt_input(m, x), eps));
  return margins_to_result(ibp_margin_lower(m, trace, y_hat), y_hat);
}

namespace {

struct RowFunc {
  Tensor a_low, a_up;          // [rows, numel(position shape)]
};

constexpr double kStableWidth = 1e-12;

// Applies the ReLU relaxation to both bound sides in place.
void relu_backward(RowFunc& f, std::vector<double>& b_low, std::vector<double>& b_up,
                   const Interval& pre) {
  const int64_t rows = f.a_low.dim(0);
  const int64_t width = f.a_low.numel() / rows;
  for (int64_t j = 0; j < width; ++j) {
    const double l = pre.lower[j];
    const double u = pre.upper[j];
    double slope_lo, slope_up, intercept_up;
    if (u <= 0.0 || (u - l < kStableWidth && u < -l)) {
      slope_lo = slope_up = 0.0;
      intercept_up = 0.0;
    } else if (l >= 0.0 || u - l < kStableWidth) {
      slope_lo = slope_up = 1.0;
      intercept_up = 0.0;
    } else {
      slope_up = u / (u - l);
      intercept_up = -l * slope_up;
      slope_lo = (u >= -l) ? 1.0 : 0.0;
    }
    for (int64_t r = 0; r < rows; ++r) {
      double& al = f.a_low[r * width + j];
      if (al >= 0.0) {
        al *= slope_lo;
      } else {
        b_low[static_cast<size_t>(r)] += al * intercept_up;
        al *= slope_up;
      }
      double& au = f.a_up[r * width + j];
      if (au >= 0.0) {
        b_up[static_cast<size_t>(r)] += au * intercept_up;
        au *= slope_up;
      } else {
        au *= slope_lo;
      }
    }
  }
}

Tensor rows_through_dense(const Tensor& a, const Tensor& w) {
  return tk::matmul(a, tk::transpose(w));
}

Tensor rows_through_conv(const Tensor& a, const LayerSpec& l, const Tensor& w, const Shape& in_shape,
                         const Shape& out_shape) {
  const int64_t rows = a.dim(0);
  Shape batched_out = out_shape;
  batched_out.insert(batched_out.begin(), rows);
  const Tensor as_out = a.with_shape(batched_out);
  Shape batched_in = in_shape;
  batched_in.insert(batched_in.begin(), rows);
  Tensor back = tk::conv2d_grad_input(as_out, w, batched_in, l.stride, l.padding);
  return back.with_shape({rows, shape_numel(in_shape)});
}

void conv_bias_contribution(const Tensor& a, const Shape& out_shape, const Tensor& bias,
                            std::vector<double>& b) {
  const int64_t rows = a.dim(0);
  const int64_t oc = out_shape[0];
  const int64_t spatial = out_shape[1] * out_shape[2];
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t o = 0; o < oc; ++o) {
      double s = 0.0;
      const double* p = a.ptr() + (r * oc + o) * spatial;
      for (int64_t t = 0; t < spatial; ++t) s += p[t];
      acc += s * bias[o];
    }
    b[static_cast<size_t>(r)] += acc;
  }
}

Tensor rows_through_pool(const Tensor& a, const Shape& out_shape, int64_t win) {
  const int64_t rows = a.dim(0);
  Shape batched_out = out_shape;
  batched_out.insert(batched_out.begin(), rows);
  Tensor back = tk::avg_pool_adjoint(a.with_shape(batched_out), win);
  return back.with_shape({rows, back.numel() / rows});
}

}  // namespace

LinearBounds crown_backward(const Model& m, const IbpTrace& trace, int64_t y_hat) {
  const int64_t k = m.meta.num_classes;
  if (y_hat < 0 || y_hat >= k) throw ContractError("crown_backward: y_hat out of range");
  if (trace.outputs.size() != m.layers.size())
    throw ContractError("crown_backward: trace does not match model");
  const int64_t rows = k - 1;

  LinearBounds out;
  out.row_class.reserve(static_cast<size_t>(rows));
  Tensor c = Tensor::zeros({rows, k});
  {
    int64_t r = 0;
    for (int64_t j = 0; j < k; ++j) {
      if (j == y_hat) continue;
      c[r * k + y_hat] = 1.0;
      c[r * k + j] = -1.0;
      out.row_class.push_back(j);
      ++r;
    }
  }

  // pending[pos] = functionals expressed on the output of layer pos-1
  // (pos 0 = network input).
  const int64_t n = static_cast<int64_t>(m.layers.size());
  std::vector<std::optional<RowFunc>> pending(static_cast<size_t>(n) + 1);
  pending[static_cast<size_t>(n)] = RowFunc{c, c};
  std::vector<double> b_low(static_cast<size_t>(rows), 0.0);
  std::vector<double> b_up(static_cast<size_t>(rows), 0.0);

  auto merge_into = [&](int64_t pos, RowFunc&& f) {
    auto& slot = pending[static_cast<size_t>(pos)];
    if (!slot) {
      slot = std::move(f);
    } else {
      slot->a_low = tk::add(slot->a_low, f.a_low);
      slot->a_up = tk::add(slot->a_up, f.a_up);
    }
  };

  for (int64_t i = n - 1; i >= 0; --i) {
    auto& slot = pending[static_cast<size_t>(i) + 1];
    if (!slot) continue;
    RowFunc f = std::move(*slot);
    slot.reset();
    const LayerSpec& l = m.layers[static_cast<size_t>(i)];
    const Shape& in_shape = i == 0 ? trace.input.shape() : trace.outputs[static_cast<size_t>(i) - 1].shape();
    const Shape& out_shape = trace.outputs[static_cast<size_t>(i)].shape();
    switch (l.kind) {
      case LayerKind::Dense: {
        const Tensor& w = m.params[static_cast<size_t>(i)].at("weight");
        const Tensor& bias = m.params[static_cast<size_t>(i)].at("bias");
        for (int64_t r = 0; r < rows; ++r) {
          double sl = 0.0, su = 0.0;
          for (int64_t j = 0; j < bias.numel(); ++j) {
            sl += f.a_low[r * bias.numel() + j] * bias[j];
            su += f.a_up[r * bias.numel() + j] * bias[j];
          }
          b_low[static_cast<size_t>(r)] += sl;
          b_up[static_cast<size_t>(r)] += su;
        }
        f.a_low = rows_through_dense(f.a_low, w);
        f.a_up = rows_through_dense(f.a_up, w);
        break;
      }
      case LayerKind::Conv2d: {
        const Tensor& w = m.params[static_cast<size_t>(i)].at("weight");
        const Tensor& bias = m.params[static_cast<size_t>(i)].at("bias");
        conv_bias_contribution(f.a_low, out_shape, bias, b_low);
        conv_bias_contribution(f.a_up, out_shape, bias, b_up);
        f.a_low = rows_through_conv(f.a_low, l, w, in_shape, out_shape);
        f.a_up = rows_through_conv(f.a_up, l, w, in_shape, out_shape);
        break;
      }
      case LayerKind::ReLU: {
        const Interval& pre =
            i == 0 ? trace.input : trace.outputs[static_cast<size_t>(i) - 1];
        relu_backward(f, b_low, b_up, pre);
        break;
      }
      case LayerKind::Flatten:
        break;  // identity on flattened functionals
      case LayerKind::AvgPool:
        f.a_low = rows_through_pool(f.a_low, out_shape, l.window);
        f.a_up = rows_through_pool(f.a_up, out_shape, l.window);
        break;
      case LayerKind::ResidualAdd: {
        const int64_t skip_pos = l.skip_from + 1;  // output position of the skip source
        merge_into(skip_pos, RowFunc{f.a_low, f.a_up});
        break;
      }
      default:
        throw CapabilityError("crown_backward: unsupported layer kind");
    }
    merge_into(i, std::move(f));
  }

  RowFunc final = std::move(*pending[0]);
  const int64_t d = shape_numel(trace.input.shape());
  out.A_low = final.a_low.with_shape({rows, d});
  out.A_up = final.a_up.with_shape({rows, d});
  out.b_low = Tensor::from_data({rows}, std::move(b_low));
  out.b_up = Tensor::from_data({rows}, std::move(b_up));
  return out;
}

std::vector<double> concretize_lower(const LinearBounds& lb, const Interval& box) {
  const int64_t rows = lb.A_low.dim(0);
  const int64_t d = lb.A_low.dim(1);
  if (shape_numel(box.shape()) != d) throw DimensionError("concretize_lower: box size mismatch");
  std::vector<double> out(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    double acc = lb.b_low[r];
    const double* a = lb.A_low.ptr() + r * d;
    for (int64_t j = 0; j < d; ++j) acc += a[j] >= 0 ? a[j] * box.lower[j] : a[j] * box.upper[j];
    out[static_cast<size_t>(r)] = acc;
  }
  return out;
}

std::vector<double> concretize_upper(const LinearBounds& lb, const Interval& box) {
  const int64_t rows = lb.A_up.dim(0);
  const int64_t d = lb.A_up.dim(1);
  if (shape_numel(box.shape()) != d) throw DimensionError("concretize_upper: box size mismatch");
  std::vector<double> out(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    double acc = lb.b_up[r];
    const double* a = lb.A_up.ptr() + r * d;
    for (int64_t j = 0; j < d; ++j) acc += a[j] >= 0 ? a[j] * box.upper[j] : a[j] * box.lower[j];
    out[static_cast<size_t>(r)] = acc;
  }
  return out;
}

VerifyResult crown_ibp_certify(const Model& m, const Tensor& x, double eps, int64_t y_hat) {
  const IbpTrace trace = ibp_propagate(m, input_box(adapt_input(m, x), eps));
  const LinearBounds lb = crown_backward(m, trace, y_hat);
  const auto lows = concretize_lower(lb, trace.input);
  // Both the CROWN bound and the interval margin bound are valid lower
  // bounds; the certifier keeps the better one per margin, which also makes
  // the certified set contain IBP's.
  std::vector<double> margins = ibp_margin_lower(m, trace, y_hat);
  for (size_t r = 0; r < lows.size(); ++r) {
    auto& slot = margins[static_cast<size_t>(lb.row_class[r])];
    slot = std::max(slot, lows[r]);
  }
  return margins_to_result(std::move(margins), y_hat);
}

VerifyMethod verify_method_from_name(const std::string& name) {
  if (name == "ibp") return VerifyMethod::IBP;
  if (name == "crown_ibp") return VerifyMethod::CrownIBP;
  throw ConfigError("unknown verification method '" + name + "' (expected ibp or crown_ibp)");
}

const char* verify_method_name(VerifyMethod m) {
  return m == VerifyMethod::IBP ? "ibp" : "crown_ibp";
}

VerifyResult certify(const Model& m, const Tensor& x, double eps, int64_t y_hat, VerifyMethod method) {
  return method == VerifyMethod::IBP ? ibp_certify(m, x, eps, y_hat)
                                     : crown_ibp_certify(m, x, eps, y_hat);
}

double verified_rate(const Model& m, const Dataset& ds, double eps, VerifyMethod method) {
  const int64_t n = ds.size();
  if (n == 0) throw ContractError("verified_rate: empty dataset");
  std::vector<char> certified(static_cast<size_t>(n), 0);
  parallel_for(n, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const Tensor x = ds.image(i);
      const int64_t y_hat = predict_one(m, x);
      certified[static_cast<size_t>(i)] =
          certify(m, x, eps, y_hat, method).status == VerifyStatus::Certified ? 1 : 0;
    }
  });
  int64_t count = 0;
  for (char c : certified) count += c;
  return static_cast<double>(count) / static_cast<double>(n);
}

}  // namespace safelens
