#include "lct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace lct {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (auto extent : shape_) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
  }
  data_.assign(numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto extent : shape_) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
  }
  if (numel(shape_) != data_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor(Shape{values.size()}, std::vector<T>(values));
}

template <typename T>
std::size_t Tensor<T>::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match shape " +
                     to_string(shape_));
  }
  std::size_t linear = 0;
  for (std::size_t axis = 0; axis < shape_.size(); ++axis) {
    if (index[axis] >= shape_[axis]) {
      throw ShapeError("index " + std::to_string(index[axis]) + " out of range on axis " +
                       std::to_string(axis) + " of " + to_string(shape_));
    }
    linear = linear * shape_[axis] + index[axis];
  }
  return linear;
}

template <typename T>
std::vector<std::size_t> Tensor<T>::unravel(std::size_t offset) const {
  if (offset >= data_.size()) throw ShapeError("offset out of range for " + to_string(shape_));
  std::vector<std::size_t> index(shape_.size());
  for (std::size_t axis = shape_.size(); axis-- > 0;) {
    index[axis] = offset % shape_[axis];
    offset /= shape_[axis];
  }
  return index;
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!has_grad_) {
    grad_.assign(data_.size(), T(0));
    has_grad_ = true;
  }
  return grad_;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad_) throw StateError("tensor has no gradient buffer");
  return grad_;
}

template <typename T>
void Tensor<T>::clear_grad() {
  grad_.clear();
  grad_.shrink_to_fit();
  has_grad_ = false;
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& where) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError(where + ": non-finite value at offset " + std::to_string(i));
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void check_finite(const Tensor<float>&, const std::string&);
template void check_finite(const Tensor<double>&, const std::string&);

}  // namespace lct
