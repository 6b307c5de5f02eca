#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lct/tensor.hpp"

namespace lct {

enum class BinaryOp { add, sub, mul, div };

// out[i] = op(a[i], b[broadcast(i)]). `b` may have lower rank (missing
// trailing axes are treated as extent 1) and any axis of extent 1 broadcasts.
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, T b);

// Materializes `b` expanded to `shape` under the same rule as elementwise.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& b, const Shape& shape);

// W: M x N, x: N, bias: M.
template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& bias);

// Mean over the listed axes; reduced axes are dropped from the result.
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, std::span<const std::size_t> axes);

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, std::initializer_list<std::size_t> axes) {
  return reduce_mean(a, std::span<const std::size_t>(axes.begin(), axes.size()));
}

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Shape bookkeeping for a square-kernel cross-correlation.
struct ConvGeometry {
  std::size_t batch = 0, in_channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel = 0, stride = 1, pad = 0;
  std::size_t out_height = 0, out_width = 0;

  // Throws ShapeError / GeometryError.
  static ConvGeometry make(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad);
  Shape output_shape() const { return {batch, out_channels, out_height, out_width}; }
  std::size_t macs() const {
    return kernel * kernel * in_channels * out_channels * out_height * out_width * batch;
  }
};

namespace detail {

// Zero-padded input split into stride x stride phase grids so that every
// kernel tap reads a contiguous, shifted row. Built once per forward and
// reused by the weight gradient.
template <typename T>
struct PhasedInput {
  ConvGeometry geom;
  std::size_t phase_h = 0, phase_w = 0;
  std::size_t sample_stride = 0;  // phase_h * phase_w
  std::size_t row_len = 0;        // one channel row across the batch plus slack
  std::vector<T> buffer;          // [phase][channel][row_len]

  // Refills from `x`, reusing storage; padding is zeroed only when the
  // geometry changes since interior writes never touch it.
  void assign(const Tensor<T>& x, const ConvGeometry& geom);
  static PhasedInput build(const Tensor<T>& x, const ConvGeometry& geom) {
    PhasedInput in;
    in.assign(x, geom);
    return in;
  }

  std::size_t tap_phase(std::size_t ky, std::size_t kx) const {
    return (ky % geom.stride) * geom.stride + kx % geom.stride;
  }
  std::size_t tap_offset(std::size_t ky, std::size_t kx) const {
    return (ky / geom.stride) * phase_w + kx / geom.stride;
  }
  const T* row(std::size_t phase, std::size_t channel) const {
    return buffer.data() + (phase * geom.in_channels + channel) * row_len;
  }
};

// Upstream gradient laid out on the phase grid. Positions outside the output
// window stay zero between calls with the same geometry.
template <typename T>
struct ConvScratch {
  std::vector<T> dy_grid;
  Shape key;
};

template <typename T>
Tensor<T> conv2d_forward(const PhasedInput<T>& input, const Tensor<T>& weight);

template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& dy, const Tensor<T>& weight, const ConvGeometry& geom,
                            ConvScratch<T>& scratch);

// Accumulates dL/dK into `dweight` (same layout as the weight).
template <typename T>
void conv2d_weight_grad(const PhasedInput<T>& input, const Tensor<T>& dy, std::span<T> dweight,
                        ConvScratch<T>& scratch);

}  // namespace detail

// Direct cross-correlation. X: N x C_in x H x W, K: C_out x C_in x k x k.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& k, const Shape& x_shape,
                                std::size_t stride, std::size_t pad);

// Returns dL/dK for the given input and upstream gradient.
template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& dy, const Tensor<T>& x, const Shape& k_shape,
                                 std::size_t stride, std::size_t pad);

}  // namespace lct
