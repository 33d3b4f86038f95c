#include "safelens/tensor.hpp"

#include <cmath>
#include <sstream>

namespace safelens {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = dtype;
  t.data_.assign(static_cast<size_t>(shape_numel(t.shape_)), 0.0);
  return t;
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  for (double& v : t.data_) v = value;
  t.seal("full");
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, DType dtype) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw DimensionError("from_data: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  t.dtype_ = dtype;
  t.seal("from_data");
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) {
  return from_data({1}, {value}, dtype);
}

Tensor Tensor::uninit(Shape shape, DType dtype) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = dtype;
  t.data_.resize(static_cast<size_t>(shape_numel(t.shape_)));
  return t;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item: tensor has " + std::to_string(numel()) + " elements, expected 1");
  return data_[0];
}

Tensor& Tensor::seal(const char* op) {
  if (dtype_ == DType::F32) {
    for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
  }
  // Fast finiteness sweep: a sum of |x| is NaN/Inf iff some element is, for
  // magnitudes far below the double overflow threshold.
  double acc = 0.0;
  for (double v : data_) acc += std::abs(v);
  if (!std::isfinite(acc)) {
    for (size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i]))
        throw DomainError(std::string(op) + ": non-finite element at flat index " + std::to_string(i));
    }
    throw DomainError(std::string(op) + ": element magnitudes overflow double accumulation");
  }
  return *this;
}

Tensor Tensor::with_shape(Shape s) const {
  if (shape_numel(s) != numel())
    throw DimensionError("with_shape: " + shape_str(s) + " incompatible with numel " +
                         std::to_string(numel()));
  Tensor t = *this;
  t.shape_ = std::move(s);
  return t;
}

Tensor Tensor::as_dtype(DType d) const {
  Tensor t = *this;
  t.dtype_ = d;
  t.seal("as_dtype");
  return t;
}

}  // namespace safelens
