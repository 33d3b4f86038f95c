#include "safelens/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "safelens/thread_pool.hpp"

namespace safelens::tk {

namespace {

// Strides of `shape` aligned into `rank` trailing slots; broadcast dims get 0.
std::vector<int64_t> aligned_strides(const Shape& shape, size_t rank, const Shape& out) {
  std::vector<int64_t> st(rank, 0);
  int64_t acc = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    const size_t d = shape.size() - 1 - i;      // dim index in `shape`
    const size_t slot = rank - 1 - i;           // slot in `out`
    st[slot] = (shape[d] == 1 && out[slot] != 1) ? 0 : acc;
    acc *= shape[d];
  }
  return st;
}

template <typename F>
Tensor ew_binary(const Tensor& a, const Tensor& b, const char* name, F&& f) {
  Shape os;
  if (!broadcastable(a.shape(), b.shape(), &os))
    throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not broadcast");
  Tensor out = Tensor::uninit(os, promote(a.dtype(), b.dtype()));
  double* po = out.ptr();
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  const int64_t total = out.numel();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < total; ++i) po[i] = f(pa[i], pb[i]);
  } else if (b.numel() == 1) {
    const double s = pb[0];
    for (int64_t i = 0; i < total; ++i) po[i] = f(pa[i], s);
  } else if (a.numel() == 1) {
    const double s = pa[0];
    for (int64_t i = 0; i < total; ++i) po[i] = f(s, pb[i]);
  } else {
    const size_t rank = os.size();
    const auto sa = aligned_strides(a.shape(), rank, os);
    const auto sb = aligned_strides(b.shape(), rank, os);
    std::vector<int64_t> cnt(rank, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t t = 0;;) {
      po[t] = f(pa[ia], pb[ib]);
      if (++t == total) break;
      for (int64_t d = static_cast<int64_t>(rank) - 1; d >= 0; --d) {
        ++cnt[d];
        ia += sa[d];
        ib += sb[d];
        if (cnt[d] < os[d]) break;
        ia -= sa[d] * os[d];
        ib -= sb[d] * os[d];
        cnt[d] = 0;
      }
    }
  }
  out.seal(name);
  return out;
}

template <typename F>
Tensor ew_unary(const Tensor& a, const char* name, F&& f) {
  Tensor out = Tensor::uninit(a.shape(), a.dtype());
  const double* pa = a.ptr();
  double* po = out.ptr();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  out.seal(name);
  return out;
}

void gemm_serial(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N,
                 int64_t lda, int64_t ldb, int64_t ldc) {
  for (int64_t i = 0; i < M; ++i) {
    double* c = C + i * ldc;
    const double* arow = A + i * lda;
    for (int64_t kk = 0; kk < K; ++kk) {
      const double a = arow[kk];
      if (a == 0.0) continue;
      const double* brow = B + kk * ldb;
      for (int64_t j = 0; j < N; ++j) c[j] += a * brow[j];
    }
  }
}

}  // namespace

bool broadcastable(const Shape& a, const Shape& b, Shape* out) {
  const size_t rank = std::max(a.size(), b.size());
  Shape os(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) return false;
    os[rank - 1 - i] = std::max(da, db);
  }
  if (out) *out = std::move(os);
  return true;
}

Tensor add(const Tensor& a, const Tensor& b) { return ew_binary(a, b, "add", [](double x, double y) { return x + y; }); }
Tensor sub(const Tensor& a, const Tensor& b) { return ew_binary(a, b, "sub", [](double x, double y) { return x - y; }); }
Tensor mul(const Tensor& a, const Tensor& b) { return ew_binary(a, b, "mul", [](double x, double y) { return x * y; }); }
Tensor div(const Tensor& a, const Tensor& b) { return ew_binary(a, b, "div", [](double x, double y) { return x / y; }); }
Tensor neg(const Tensor& a) { return ew_unary(a, "neg", [](double x) { return -x; }); }
Tensor add_scalar(const Tensor& a, double s) { return ew_unary(a, "add_scalar", [s](double x) { return x + s; }); }
Tensor mul_scalar(const Tensor& a, double s) { return ew_unary(a, "mul_scalar", [s](double x) { return x * s; }); }

Tensor exp(const Tensor& a) { return ew_unary(a, "exp", [](double x) { return std::exp(x); }); }

Tensor log(const Tensor& a) {
  const double* p = a.ptr();
  for (int64_t i = 0; i < a.numel(); ++i)
    if (p[i] <= 0.0)
      throw DomainError("log: nonpositive argument " + std::to_string(p[i]) + " at flat index " +
                        std::to_string(i));
  return ew_unary(a, "log", [](double x) { return std::log(x); });
}

Tensor abs(const Tensor& a) { return ew_unary(a, "abs", [](double x) { return std::abs(x); }); }
Tensor sign(const Tensor& a) {
  return ew_unary(a, "sign", [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}
Tensor relu(const Tensor& a) { return ew_unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }); }

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return ew_unary(a, "clamp", [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
}

Tensor min(const Tensor& a, const Tensor& b) { return ew_binary(a, b, "min", [](double x, double y) { return std::min(x, y); }); }
Tensor max(const Tensor& a, const Tensor& b) { return ew_binary(a, b, "max", [](double x, double y) { return std::max(x, y); }); }

Tensor sum_to(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  Shape os;
  if (!broadcastable(target, a.shape(), &os) || os != a.shape())
    throw DimensionError("sum_to: cannot reduce " + shape_str(a.shape()) + " to " + shape_str(target));
  Tensor out = Tensor::zeros(target, a.dtype());
  const size_t rank = a.shape().size();
  const auto st = aligned_strides(target, rank, a.shape());
  std::vector<int64_t> cnt(rank, 0);
  const double* pa = a.ptr();
  double* po = out.ptr();
  const int64_t total = a.numel();
  int64_t io = 0;
  for (int64_t t = 0;;) {
    po[io] += pa[t];
    if (++t == total) break;
    for (int64_t d = static_cast<int64_t>(rank) - 1; d >= 0; --d) {
      ++cnt[d];
      io += st[d];
      if (cnt[d] < a.shape()[d]) break;
      io -= st[d] * a.shape()[d];
      cnt[d] = 0;
    }
  }
  out.seal("sum_to");
  return out;
}

Tensor broadcast_to(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  Shape os;
  if (!broadcastable(a.shape(), target, &os) || os != target)
    throw DimensionError("broadcast_to: cannot expand " + shape_str(a.shape()) + " to " +
                         shape_str(target));
  const Tensor pad = Tensor::zeros(target, a.dtype());
  return ew_binary(a, pad, "broadcast_to", [](double x, double) { return x; });
}

double sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double max_all(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("max_all: empty tensor");
  double m = a[0];
  for (double v : a.data()) m = std::max(m, v);
  return m;
}

double min_all(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("min_all: empty tensor");
  double m = a[0];
  for (double v : a.data()) m = std::min(m, v);
  return m;
}

double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double linf_norm(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

namespace {
void require_2d(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape()));
}
}  // namespace

Tensor row_max(const Tensor& a) {
  require_2d(a, "row_max");
  const int64_t n = a.dim(0), d = a.dim(1);
  Tensor out = Tensor::uninit({n, 1}, a.dtype());
  for (int64_t i = 0; i < n; ++i) {
    double m = a[i * d];
    for (int64_t j = 1; j < d; ++j) m = std::max(m, a[i * d + j]);
    out[i] = m;
  }
  out.seal("row_max");
  return out;
}

std::vector<int64_t> row_argmax(const Tensor& a) {
  require_2d(a, "row_argmax");
  const int64_t n = a.dim(0), d = a.dim(1);
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < d; ++j)
      if (a[i * d + j] > a[i * d + best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& cols) {
  require_2d(a, "gather_rows");
  const int64_t n = a.dim(0), d = a.dim(1);
  if (static_cast<int64_t>(cols.size()) != n) throw DimensionError("gather_rows: index count mismatch");
  Tensor out = Tensor::uninit({n, 1}, a.dtype());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t c = cols[static_cast<size_t>(i)];
    if (c < 0 || c >= d) throw ContractError("gather_rows: column " + std::to_string(c) + " out of range");
    out[i] = a[i * d + c];
  }
  out.seal("gather_rows");
  return out;
}

Tensor scatter_rows(const Tensor& g, const std::vector<int64_t>& cols, int64_t width) {
  if (g.rank() != 2 || g.dim(1) != 1) throw DimensionError("scatter_rows: expected [N,1], got " + shape_str(g.shape()));
  const int64_t n = g.dim(0);
  if (static_cast<int64_t>(cols.size()) != n) throw DimensionError("scatter_rows: index count mismatch");
  Tensor out = Tensor::zeros({n, width}, g.dtype());
  for (int64_t i = 0; i < n; ++i) out[i * width + cols[static_cast<size_t>(i)]] = g[i];
  out.seal("scatter_rows");
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  const bool vec = a.rank() == 1;
  const int64_t n = vec ? 1 : a.dim(0);
  const int64_t d = vec ? a.dim(0) : a.dim(1);
  if (!vec) require_2d(a, "softmax_rows");
  Tensor out = Tensor::uninit(a.shape(), a.dtype());
  for (int64_t i = 0; i < n; ++i) {
    const double* row = a.ptr() + i * d;
    double* orow = out.ptr() + i * d;
    double m = row[0];
    for (int64_t j = 1; j < d; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - m);
      s += orow[j];
    }
    for (int64_t j = 0; j < d; ++j) orow[j] /= s;
  }
  out.seal("softmax_rows");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::uninit({n, m}, a.dtype());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  out.seal("transpose");
  return out;
}

void gemm_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  gemm_serial(a, b, c, m, k, n, k, n, n);
}

void gemm_abt_acc(const double* a, const double* b, double* c, int64_t m, int64_t s, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * s;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * s;
      double acc = 0.0;
      for (int64_t t = 0; t < s; ++t) acc += arow[t] * brow[t];
      c[i * n + j] += acc;
    }
  }
}

void gemm_atb_acc(const double* a, const double* b, double* c, int64_t n, int64_t m, int64_t h) {
  for (int64_t t = 0; t < n; ++t) {
    const double* arow = a + t * m;
    const double* brow = b + t * h;
    for (int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * h;
      for (int64_t j = 0; j < h; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n}, promote(a.dtype(), b.dtype()));
  const double* A = a.ptr();
  const double* B = b.ptr();
  double* C = out.ptr();
  if (m >= n) {
    parallel_for(m, 32, [&](int64_t lo, int64_t hi) {
      gemm_serial(A + lo * k, B, C + lo * n, hi - lo, k, n, k, n, n);
    });
  } else {
    parallel_for(n, 64, [&](int64_t lo, int64_t hi) {
      gemm_serial(A, B + lo, C + lo, m, k, hi - lo, k, n, n);
    });
  }
  out.seal("matmul");
  return out;
}

ConvGeom conv_geometry(const Shape& x, const Shape& kernel, int64_t stride, int64_t pad) {
  if (kernel.size() != 4) throw DimensionError("conv2d: kernel must be [O,C,kh,kw], got " + shape_str(kernel));
  if (x.size() != 3 && x.size() != 4)
    throw DimensionError("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(x));
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d: padding must be >= 0");
  ConvGeom g;
  g.batched = x.size() == 4;
  g.batch = g.batched ? x[0] : 1;
  g.in_c = x[x.size() - 3];
  g.in_h = x[x.size() - 2];
  g.in_w = x[x.size() - 1];
  g.out_c = kernel[0];
  g.kh = kernel[2];
  g.kw = kernel[3];
  g.stride = stride;
  g.pad = pad;
  if (kernel[1] != g.in_c)
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel[1]) + " channels, input has " +
                         std::to_string(g.in_c));
  if (g.kh > g.in_h + 2 * pad || g.kw > g.in_w + 2 * pad)
    throw DimensionError("conv2d: kernel exceeds padded input");
  g.out_h = (g.in_h + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.kw) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw DimensionError("conv2d: nonpositive output dims");
  return g;
}

namespace {

// Writes the im2col matrix of one sample into `cols` with row stride `ld`.
void im2col(const double* x, const ConvGeom& g, double* cols, int64_t ld) {
  int64_t row = 0;
  for (int64_t c = 0; c < g.in_c; ++c) {
    const double* xc = x + c * g.in_h * g.in_w;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj, ++row) {
        double* dst = cols + row * ld;
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh * g.stride - g.pad + ki;
          double* drow = dst + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::memset(drow, 0, sizeof(double) * static_cast<size_t>(g.out_w));
            continue;
          }
          const double* xrow = xc + ih * g.in_w;
          for (int64_t ow = 0; ow < g.out_w; ++ow) {
            const int64_t iw = ow * g.stride - g.pad + kj;
            drow[ow] = (iw >= 0 && iw < g.in_w) ? xrow[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a column matrix back into one sample.
void col2im_acc(const double* cols, const ConvGeom& g, double* x, int64_t ld) {
  int64_t row = 0;
  for (int64_t c = 0; c < g.in_c; ++c) {
    double* xc = x + c * g.in_h * g.in_w;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj, ++row) {
        const double* src = cols + row * ld;
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          const double* srow = src + oh * g.out_w;
          double* xrow = xc + ih * g.in_w;
          for (int64_t ow = 0; ow < g.out_w; ++ow) {
            const int64_t iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.in_w) xrow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

Shape conv_out_shape(const ConvGeom& g) {
  return g.batched ? Shape{g.batch, g.out_c, g.out_h, g.out_w} : Shape{g.out_c, g.out_h, g.out_w};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int64_t stride, int64_t pad) {
  const ConvGeom g = conv_geometry(x.shape(), kernel.shape(), stride, pad);
  const int64_t ckk = g.in_c * g.kh * g.kw;
  const int64_t ohow = g.out_h * g.out_w;
  const int64_t cols_w = g.batch * ohow;
  std::vector<double> cols(static_cast<size_t>(ckk * cols_w));
  const int64_t in_sz = g.in_c * g.in_h * g.in_w;
  parallel_for(g.batch, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t n = lo; n < hi; ++n) im2col(x.ptr() + n * in_sz, g, cols.data() + n * ohow, cols_w);
  });
  std::vector<double> out_mat(static_cast<size_t>(g.out_c * cols_w), 0.0);
  parallel_for(cols_w, 256, [&](int64_t lo, int64_t hi) {
    gemm_serial(kernel.ptr(), cols.data() + lo, out_mat.data() + lo, g.out_c, ckk, hi - lo, ckk,
                cols_w, cols_w);
  });
  Tensor out = Tensor::uninit(conv_out_shape(g), promote(x.dtype(), kernel.dtype()));
  double* po = out.ptr();
  parallel_for(g.batch, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t n = lo; n < hi; ++n)
      for (int64_t o = 0; o < g.out_c; ++o)
        std::memcpy(po + (n * g.out_c + o) * ohow, out_mat.data() + o * cols_w + n * ohow,
                    sizeof(double) * static_cast<size_t>(ohow));
  });
  out.seal("conv2d");
  return out;
}

Tensor conv2d_grad_input(const Tensor& gout, const Tensor& kernel, const Shape& input_shape,
                         int64_t stride, int64_t pad) {
  const ConvGeom g = conv_geometry(input_shape, kernel.shape(), stride, pad);
  const int64_t ckk = g.in_c * g.kh * g.kw;
  const int64_t ohow = g.out_h * g.out_w;
  const int64_t cols_w = g.batch * ohow;
  if (gout.shape() != conv_out_shape(g))
    throw DimensionError("conv2d_grad_input: cotangent shape " + shape_str(gout.shape()) +
                         " does not match " + shape_str(conv_out_shape(g)));
  // Regroup the cotangent to [O, N*OH*OW].
  std::vector<double> gmat(static_cast<size_t>(g.out_c * cols_w));
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t o = 0; o < g.out_c; ++o)
      std::memcpy(gmat.data() + o * cols_w + n * ohow, gout.ptr() + (n * g.out_c + o) * ohow,
                  sizeof(double) * static_cast<size_t>(ohow));
  const Tensor kt = transpose(kernel.with_shape({g.out_c, ckk}));
  std::vector<double> gcols(static_cast<size_t>(ckk * cols_w), 0.0);
  parallel_for(cols_w, 256, [&](int64_t lo, int64_t hi) {
    gemm_serial(kt.ptr(), gmat.data() + lo, gcols.data() + lo, ckk, g.out_c, hi - lo, g.out_c,
                cols_w, cols_w);
  });
  Tensor gx = Tensor::zeros(input_shape, promote(gout.dtype(), kernel.dtype()));
  const int64_t in_sz = g.in_c * g.in_h * g.in_w;
  parallel_for(g.batch, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t n = lo; n < hi; ++n) col2im_acc(gcols.data() + n * ohow, g, gx.ptr() + n * in_sz, cols_w);
  });
  gx.seal("conv2d_grad_input");
  return gx;
}

Tensor conv2d_grad_kernel(const Tensor& gout, const Tensor& x, const Shape& kernel_shape,
                          int64_t stride, int64_t pad) {
  const ConvGeom g = conv_geometry(x.shape(), kernel_shape, stride, pad);
  const int64_t ckk = g.in_c * g.kh * g.kw;
  const int64_t ohow = g.out_h * g.out_w;
  const int64_t cols_w = g.batch * ohow;
  if (gout.shape() != conv_out_shape(g))
    throw DimensionError("conv2d_grad_kernel: cotangent shape mismatch");
  std::vector<double> cols(static_cast<size_t>(ckk * cols_w));
  const int64_t in_sz = g.in_c * g.in_h * g.in_w;
  parallel_for(g.batch, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t n = lo; n < hi; ++n) im2col(x.ptr() + n * in_sz, g, cols.data() + n * ohow, cols_w);
  });
  std::vector<double> gmat(static_cast<size_t>(g.out_c * cols_w));
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t o = 0; o < g.out_c; ++o)
      std::memcpy(gmat.data() + o * cols_w + n * ohow, gout.ptr() + (n * g.out_c + o) * ohow,
                  sizeof(double) * static_cast<size_t>(ohow));
  Tensor gk = Tensor::zeros(kernel_shape, promote(gout.dtype(), x.dtype()));
  parallel_for(g.out_c, 1, [&](int64_t lo, int64_t hi) {
    gemm_abt_acc(gmat.data() + lo * cols_w, cols.data(), gk.ptr() + lo * ckk, hi - lo, cols_w, ckk);
  });
  gk.seal("conv2d_grad_kernel");
  return gk;
}

Tensor avg_pool(const Tensor& x, int64_t win) {
  if (win < 1) throw ContractError("avg_pool: window must be >= 1");
  if (x.rank() != 3 && x.rank() != 4)
    throw DimensionError("avg_pool: input must be [C,H,W] or [N,C,H,W]");
  const int64_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (h % win != 0 || w % win != 0)
    throw DimensionError("avg_pool: spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by window " + std::to_string(win));
  const int64_t planes = x.numel() / (h * w);
  const int64_t oh = h / win, ow = w / win;
  Shape os = x.shape();
  os[os.size() - 2] = oh;
  os[os.size() - 1] = ow;
  Tensor out = Tensor::uninit(os, x.dtype());
  const double inv = 1.0 / static_cast<double>(win * win);
  parallel_for(planes, 4, [&](int64_t lo, int64_t hi) {
    for (int64_t p = lo; p < hi; ++p) {
      const double* src = x.ptr() + p * h * w;
      double* dst = out.ptr() + p * oh * ow;
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double s = 0.0;
          for (int64_t a = 0; a < win; ++a)
            for (int64_t b = 0; b < win; ++b) s += src[(i * win + a) * w + j * win + b];
          dst[i * ow + j] = s * inv;
        }
    }
  });
  out.seal("avg_pool");
  return out;
}

Tensor avg_pool_adjoint(const Tensor& gpooled, int64_t win) {
  if (gpooled.rank() != 3 && gpooled.rank() != 4)
    throw DimensionError("avg_pool_adjoint: input must be [C,H,W] or [N,C,H,W]");
  const int64_t oh = gpooled.dim(gpooled.rank() - 2), ow = gpooled.dim(gpooled.rank() - 1);
  const int64_t planes = gpooled.numel() / (oh * ow);
  Shape os = gpooled.shape();
  os[os.size() - 2] = oh * win;
  os[os.size() - 1] = ow * win;
  const int64_t h = oh * win, w = ow * win;
  Tensor out = Tensor::uninit(os, gpooled.dtype());
  const double inv = 1.0 / static_cast<double>(win * win);
  parallel_for(planes, 4, [&](int64_t lo, int64_t hi) {
    for (int64_t p = lo; p < hi; ++p) {
      const double* src = gpooled.ptr() + p * oh * ow;
      double* dst = out.ptr() + p * h * w;
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          const double v = src[i * ow + j] * inv;
          for (int64_t a = 0; a < win; ++a)
            for (int64_t b = 0; b < win; ++b) dst[(i * win + a) * w + j * win + b] = v;
        }
    }
  });
  out.seal("avg_pool_adjoint");
  return out;
}

}  // namespace safelens::tk
