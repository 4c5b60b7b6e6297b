#include "refquery/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "refquery/error.hpp"

namespace refquery {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw InvalidShapeError("tensor shape " + shape_string(shape_) +
                            " does not match " + std::to_string(data_.size()) +
                            " values");
  }
}

Tensor Tensor::vector(std::vector<float> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return vector(std::vector<float>(values));
}

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw InvalidShapeError("cannot reshape " + shape_string(shape_) + " to " +
                            shape_string(shape));
  }
  shape_ = std::move(shape);
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

}  // namespace refquery
