#include "coughgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coughgan/error.hpp"

namespace coughgan {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor Tensor::uninitialized(Shape shape) {
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  Tensor t;
  t.data_.resize(shape_size(shape));
  t.shape_ = std::move(shape);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " elements");
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor t = *this;
  t.reshape(std::move(shape));
  return t;
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (shape_ != other.shape_)
    throw ShapeError("cannot add " + shape_string(other.shape_) + " to " + shape_string(shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + shape_string(expected) +
                     ", got " + shape_string(t.shape()));
}

}  // namespace coughgan
