#pragma once

#include <vector>

#include "safelens/tensor.hpp"

// Plain (non-differentiating) tensor kernels. The autodiff graph, the bound
// propagation code and the optimizers all bottom out here.
//
// Broadcasting rule, used by the binary elementwise kernels: shapes are
// aligned at the trailing axis; each aligned dimension must match, or be 1 on
// one side, or be absent on the shorter side. This covers scalar-with-tensor
// and trailing-axis expansion and nothing more exotic.
namespace safelens::tk {

bool broadcastable(const Shape& a, const Shape& b, Shape* out = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // throws DomainError on nonpositive input
Tensor abs(const Tensor& a);
Tensor sign(const Tensor& a);  // -1/0/+1
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor min(const Tensor& a, const Tensor& b);  // elementwise, equal shapes
Tensor max(const Tensor& a, const Tensor& b);

// Sums a down to `target` shape (the adjoint of broadcast_to).
Tensor sum_to(const Tensor& a, const Shape& target);
Tensor broadcast_to(const Tensor& a, const Shape& target);

double sum_all(const Tensor& a);
double max_all(const Tensor& a);
double min_all(const Tensor& a);
double l2_norm(const Tensor& a);
double linf_norm(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);

// Rows are the leading dimension of a 2-D tensor.
Tensor row_max(const Tensor& a);                    // [N,D] -> [N,1]
std::vector<int64_t> row_argmax(const Tensor& a);   // first max wins
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& cols);  // [N,D] -> [N,1]
Tensor scatter_rows(const Tensor& g, const std::vector<int64_t>& cols, int64_t width);
Tensor softmax_rows(const Tensor& a);  // numerically stable; accepts [D] or [N,D]

Tensor transpose(const Tensor& a);  // 2-D

// C[m,n] = A[m,k] x B[k,n]; threaded over the larger output dimension.
Tensor matmul(const Tensor& a, const Tensor& b);

// Raw gemm variants on row-major buffers (exposed for reuse; C is accumulated
// into, callers zero it first).
void gemm_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void gemm_abt_acc(const double* a, const double* b, double* c, int64_t m, int64_t s, int64_t n);
void gemm_atb_acc(const double* a, const double* b, double* c, int64_t n, int64_t m, int64_t h);

struct ConvGeom {
  int64_t batch, in_c, in_h, in_w;
  int64_t out_c, kh, kw, stride, pad;
  int64_t out_h, out_w;
  bool batched;  // input had a leading batch axis
};
ConvGeom conv_geometry(const Shape& x, const Shape& kernel, int64_t stride, int64_t pad);

// Cross-correlation (no kernel flip). x: [C,H,W] or [N,C,H,W];
// kernel: [O,C,kh,kw]. Output spatial dims follow floor((H+2p-kh)/stride)+1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int64_t stride, int64_t pad);
// Adjoint of conv2d in its first argument: maps an output-shaped cotangent
// back to input shape.
Tensor conv2d_grad_input(const Tensor& gout, const Tensor& kernel, const Shape& input_shape,
                         int64_t stride, int64_t pad);
// Adjoint in the kernel argument.
Tensor conv2d_grad_kernel(const Tensor& gout, const Tensor& x, const Shape& kernel_shape,
                          int64_t stride, int64_t pad);

// Non-overlapping window mean over the trailing two axes; spatial dims must
// be divisible by win.
Tensor avg_pool(const Tensor& x, int64_t win);
Tensor avg_pool_adjoint(const Tensor& g, int64_t win);

}  // namespace safelens::tk
