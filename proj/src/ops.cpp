#include "lct/ops.hpp"

#include <algorithm>

namespace lct {
namespace {

// Broadcast strides of `b` against `shape` (0 on broadcast axes).
Shape broadcast_strides(const Shape& a_shape, const Shape& b_shape) {
  if (b_shape.size() > a_shape.size()) {
    throw ShapeError("cannot broadcast " + to_string(b_shape) + " to " + to_string(a_shape));
  }
  Shape padded = b_shape;
  padded.resize(a_shape.size(), 1);
  const Shape dense = strides_of(padded);
  Shape strides(a_shape.size(), 0);
  for (std::size_t axis = 0; axis < a_shape.size(); ++axis) {
    if (padded[axis] == a_shape[axis]) {
      strides[axis] = dense[axis];
    } else if (padded[axis] != 1) {
      throw ShapeError("cannot broadcast " + to_string(b_shape) + " to " + to_string(a_shape));
    }
  }
  return strides;
}

template <typename T>
T apply(BinaryOp op, T a, T b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::div: return a / b;
  }
  return a;
}

template <typename T>
void check_result(const Tensor<T>& out) {
  check_finite(out, "elementwise");
}

}  // namespace

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b[i]);
    check_result(out);
    return out;
  }
  const Shape strides = broadcast_strides(a.shape(), b.shape());
  const std::size_t rank = a.rank();
  std::vector<std::size_t> index(rank, 0);
  std::size_t b_offset = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = apply(op, a[i], b[b_offset]);
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++index[axis] < a.dim(axis)) {
        b_offset += strides[axis];
        break;
      }
      b_offset -= strides[axis] * (a.dim(axis) - 1);
      index[axis] = 0;
    }
  }
  check_result(out);
  return out;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, T b) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b);
  check_result(out);
  return out;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& b, const Shape& shape) {
  Tensor<T> ones(shape, T(1));
  return elementwise(BinaryOp::mul, ones, b);
}

template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.rank() != 1 || bias.rank() != 1 || w.dim(1) != x.dim(0) ||
      w.dim(0) != bias.dim(0)) {
    throw ShapeError("matvec: W " + to_string(w.shape()) + ", x " + to_string(x.shape()) +
                     ", bias " + to_string(bias.shape()) + " do not conform");
  }
  const std::size_t m = w.dim(0), n = w.dim(1);
  Tensor<T> out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    T acc = 0;
    const T* row = w.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * x[j];
    out[i] = acc + bias[i];
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, std::span<const std::size_t> axes) {
  if (axes.empty()) throw ShapeError("reduce_mean: empty reduction (no axes given)");
  std::vector<bool> reduced(a.rank(), false);
  for (auto axis : axes) {
    if (axis >= a.rank()) {
      throw ShapeError("reduce_mean: axis " + std::to_string(axis) + " invalid for " +
                       to_string(a.shape()));
    }
    if (reduced[axis]) throw ShapeError("reduce_mean: duplicate axis " + std::to_string(axis));
    reduced[axis] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t axis = 0; axis < a.rank(); ++axis) {
    if (reduced[axis]) {
      count *= a.dim(axis);
    } else {
      out_shape.push_back(a.dim(axis));
    }
  }
  // Output stride of each input axis (0 for reduced axes).
  const Shape out_dense = strides_of(out_shape);
  Shape strides(a.rank(), 0);
  for (std::size_t axis = 0, k = 0; axis < a.rank(); ++axis) {
    if (!reduced[axis]) strides[axis] = out_dense[k++];
  }
  std::vector<double> sums(numel(out_shape), 0.0);
  std::vector<std::size_t> index(a.rank(), 0);
  std::size_t o = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sums[o] += static_cast<double>(a[i]);
    for (std::size_t axis = a.rank(); axis-- > 0;) {
      if (++index[axis] < a.dim(axis)) {
        o += strides[axis];
        break;
      }
      o -= strides[axis] * (a.dim(axis) - 1);
      index[axis] = 0;
    }
  }
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < sums.size(); ++i) out[i] = static_cast<T>(sums[i] / static_cast<double>(count));
  return out;
}

#define LCT_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> elementwise(BinaryOp, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> elementwise(BinaryOp, const Tensor<T>&, T);                                  \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                                \
  template Tensor<T> matvec(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> reduce_mean(const Tensor<T>&, std::span<const std::size_t>);

LCT_INSTANTIATE_OPS(float)
LCT_INSTANTIATE_OPS(double)

#undef LCT_INSTANTIATE_OPS

}  // namespace lct
