#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "safelens/error.hpp"

namespace safelens {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Numeric mode of a tensor. Storage is always double; F32 tensors have every
// element rounded to the nearest float after each operation, so 32-bit runs
// see genuine single-precision values while bound arithmetic stays in double.
enum class DType { F32, F64 };

inline DType promote(DType a, DType b) {
  return (a == DType::F32 && b == DType::F32) ? DType::F32 : DType::F64;
}

// Dense row-major array of doubles. Immutable by convention once sealed:
// kernels build a tensor with `uninit`, fill it, then call `seal()`, which
// applies F32 quantization and rejects non-finite elements.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::F64);
  static Tensor full(Shape shape, double value, DType dtype = DType::F64);
  static Tensor from_data(Shape shape, std::vector<double> data, DType dtype = DType::F64);
  static Tensor scalar(double value, DType dtype = DType::F64);
  // Allocated but unsealed; caller fills data() then calls seal().
  static Tensor uninit(Shape shape, DType dtype = DType::F64);

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_[i]; }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  DType dtype() const { return dtype_; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  const double* ptr() const { return data_.data(); }
  double* ptr() { return data_.data(); }

  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

  double item() const;  // value of a one-element tensor

  // Quantizes (F32 mode) and verifies finiteness. Throws DomainError if any
  // element is NaN/Inf. Returns *this for chaining.
  Tensor& seal(const char* op = "tensor");

  Tensor with_shape(Shape s) const;   // same data, new shape (numel must match)
  Tensor as_dtype(DType d) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::F64;
};

}  // namespace safelens
