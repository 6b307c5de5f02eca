#include <algorithm>
#include <cstring>

#include "lct/ops.hpp"
#include "lct/parallel.hpp"

namespace lct {
namespace {

#if defined(__AVX512F__)
constexpr std::size_t kVecBytes = 64;
#else
constexpr std::size_t kVecBytes = 32;
#endif

template <typename T>
struct VecOf {
  typedef T type __attribute__((vector_size(kVecBytes)));
  // Same vector with element alignment, for unaligned loads and stores.
  typedef T unaligned __attribute__((vector_size(kVecBytes), aligned(alignof(T)), may_alias));
};
template <typename T>
using Vec = typename VecOf<T>::type;

template <typename T>
constexpr std::size_t kLanes = kVecBytes / sizeof(T);
// Slack past the end of every grid row so the widest tile may overrun.
template <typename T>
constexpr std::size_t kChunk = 2 * kLanes<T>;

template <typename T>
inline Vec<T> load(const T* p) {
  return *reinterpret_cast<const typename VecOf<T>::unaligned*>(p);
}

template <typename T>
inline void store(T* p, Vec<T> v) {
  *reinterpret_cast<typename VecOf<T>::unaligned*>(p) = v;
}

// Fixed lane order keeps the result independent of anything but the data.
template <typename T>
inline T hsum(const Vec<T>& v) {
  T s = 0;
  for (std::size_t i = 0; i < kLanes<T>; ++i) s += v[i];
  return s;
}

constexpr std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

// out[r][t] = sum_j coef[j * coef_stride + r] * src[j][t] for R rows and NV
// vectors starting at t.
template <typename T, int R, int NV>
inline void gemm_tile(const T* const* src, const T* coef, std::size_t coef_stride, std::size_t k,
                      std::size_t t, T* out, std::size_t out_stride) {
  Vec<T> acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) acc0[r] = acc1[r] = Vec<T>{};
  for (std::size_t j = 0; j < k; ++j) {
    const T* s = src[j] + t;
    const Vec<T> x0 = load(s);
    const Vec<T> x1 = NV == 2 ? load(s + kLanes<T>) : Vec<T>{};
    const T* c = coef + j * coef_stride;
    for (int r = 0; r < R; ++r) {
      const T w = c[r];
      acc0[r] += x0 * w;
      if constexpr (NV == 2) acc1[r] += x1 * w;
    }
  }
  for (int r = 0; r < R; ++r) {
    store(out + r * out_stride + t, acc0[r]);
    if constexpr (NV == 2) store(out + r * out_stride + t + kLanes<T>, acc1[r]);
  }
}

template <typename T, int NV>
void gemm_rows(const T* const* src, const T* coef, std::size_t m, std::size_t k, std::size_t t, T* out,
               std::size_t out_stride) {
  std::size_t r = 0;
  for (; r + 6 <= m; r += 6) gemm_tile<T, 6, NV>(src, coef + r, m, k, t, out + r * out_stride, out_stride);
  T* o = out + r * out_stride;
  switch (m - r) {
    case 5: gemm_tile<T, 5, NV>(src, coef + r, m, k, t, o, out_stride); break;
    case 4: gemm_tile<T, 4, NV>(src, coef + r, m, k, t, o, out_stride); break;
    case 3: gemm_tile<T, 3, NV>(src, coef + r, m, k, t, o, out_stride); break;
    case 2: gemm_tile<T, 2, NV>(src, coef + r, m, k, t, o, out_stride); break;
    case 1: gemm_tile<T, 1, NV>(src, coef + r, m, k, t, o, out_stride); break;
    default: break;
  }
}

// Shifted-row GEMM: m output rows of length `len` (a multiple of the lane
// count), k source rows, coefficients laid out [k][m].
template <typename T>
void shift_gemm(const T* const* src, const T* coef, std::size_t m, std::size_t k, std::size_t len, T* out,
                std::size_t out_stride) {
  const std::size_t step = 2 * kLanes<T>;
  std::size_t t = 0;
  for (; t + step <= len; t += step) gemm_rows<T, 2>(src, coef, m, k, t, out, out_stride);
  if (t < len) gemm_rows<T, 1>(src, coef, m, k, t, out, out_stride);
}

// part[r][j] += sum_t a[r][t] * b[j][t] over [t0, t1), kept as lane vectors.
template <typename T, int R, int J>
inline void dot_tile(const T* const* a, const T* const* b, std::size_t t0, std::size_t t1, Vec<T>* part,
                     std::size_t part_stride) {
  Vec<T> acc[R][J];
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < J; ++j) acc[r][j] = part[r * part_stride + j];
  for (std::size_t t = t0; t < t1; t += kLanes<T>) {
    Vec<T> x[J];
    for (int j = 0; j < J; ++j) x[j] = load(b[j] + t);
    for (int r = 0; r < R; ++r) {
      const Vec<T> y = load(a[r] + t);
      for (int j = 0; j < J; ++j) acc[r][j] += y * x[j];
    }
  }
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < J; ++j) part[r * part_stride + j] = acc[r][j];
}

template <typename T, int R>
void dot_cols(const T* const* a, const T* const* b, std::size_t k, std::size_t t0, std::size_t t1, Vec<T>* part,
              std::size_t part_stride) {
  std::size_t j = 0;
  for (; j + 3 <= k; j += 3) dot_tile<T, R, 3>(a, b + j, t0, t1, part + j, part_stride);
  switch (k - j) {
    case 2: dot_tile<T, R, 2>(a, b + j, t0, t1, part + j, part_stride); break;
    case 1: dot_tile<T, R, 1>(a, b + j, t0, t1, part + j, part_stride); break;
    default: break;
  }
}

template <typename T>
void dot_rows(const T* const* a, std::size_t m, const T* const* b, std::size_t k, std::size_t t0, std::size_t t1,
              Vec<T>* part) {
  std::size_t r = 0;
  for (; r + 4 <= m; r += 4) dot_cols<T, 4>(a + r, b, k, t0, t1, part + r * k, k);
  switch (m - r) {
    case 3: dot_cols<T, 3>(a + r, b, k, t0, t1, part + r * k, k); break;
    case 2: dot_cols<T, 2>(a + r, b, k, t0, t1, part + r * k, k); break;
    case 1: dot_cols<T, 1>(a + r, b, k, t0, t1, part + r * k, k); break;
    default: break;
  }
}

// Copies dy onto the phase-grid layout [out_channel][lead + n*ss + oy*pw + ox].
// The lead of one sample stride lets the input gradient shift backwards.
template <typename T>
const T* fill_dy_grid(const Tensor<T>& dy, const ConvGeometry& g, std::size_t phase_w, std::size_t ss,
                      detail::ConvScratch<T>& scratch, std::size_t& grid_len) {
  if (dy.shape() != g.output_shape()) {
    throw ShapeError("conv2d: upstream gradient " + to_string(dy.shape()) + " does not match output " +
                     to_string(g.output_shape()));
  }
  const std::size_t lead = ss;
  grid_len = lead + (g.batch + 1) * ss + 2 * kChunk<T>;
  const Shape key{g.batch, g.out_channels, g.out_height, g.out_width, phase_w, ss};
  if (scratch.key != key) {
    scratch.dy_grid.assign(g.out_channels * grid_len, T(0));
    scratch.key = key;
  }
  const std::size_t plane = g.out_height * g.out_width;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const T* src = dy.data() + (n * g.out_channels + oc) * plane;
      T* dst = scratch.dy_grid.data() + oc * grid_len + lead + n * ss;
      for (std::size_t oy = 0; oy < g.out_height; ++oy) {
        std::memcpy(dst + oy * phase_w, src + oy * g.out_width, g.out_width * sizeof(T));
      }
    }
  }
  return scratch.dy_grid.data() + lead;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

ConvGeometry ConvGeometry::make(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be N x C x H x W, got " + to_string(input));
  if (weight.size() != 4 || weight[2] != weight[3]) {
    throw ShapeError("conv2d: kernel must be C_out x C_in x k x k, got " + to_string(weight));
  }
  if (weight[1] != input[1]) {
    throw ShapeError("conv2d: kernel " + to_string(weight) + " expects " + std::to_string(weight[1]) +
                     " input channels, input has " + std::to_string(input[1]));
  }
  if (stride == 0) throw GeometryError("conv2d: stride must be positive");
  for (auto extent : input) {
    if (extent == 0) throw ShapeError("conv2d: empty input " + to_string(input));
  }
  for (auto extent : weight) {
    if (extent == 0) throw ShapeError("conv2d: empty kernel " + to_string(weight));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = weight[0];
  g.kernel = weight[2];
  g.stride = stride;
  g.pad = pad;
  if (g.height + 2 * pad < g.kernel || g.width + 2 * pad < g.kernel) {
    throw GeometryError("conv2d: kernel " + std::to_string(g.kernel) + " with padding " + std::to_string(pad) +
                        " does not fit input " + to_string(input));
  }
  g.out_height = (g.height + 2 * pad - g.kernel) / stride + 1;
  g.out_width = (g.width + 2 * pad - g.kernel) / stride + 1;
  return g;
}

namespace detail {

template <typename T>
void PhasedInput<T>::assign(const Tensor<T>& x, const ConvGeometry& g) {
  if (x.shape() != Shape{g.batch, g.in_channels, g.height, g.width}) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " does not match geometry");
  }
  const std::size_t s = g.stride, p = g.pad;
  const std::size_t ph = ceil_div(g.height + 2 * p, s), pw = ceil_div(g.width + 2 * p, s);
  const std::size_t ss = ph * pw;
  const std::size_t len = g.batch * ss + ss + 2 * kChunk<T>;
  const std::size_t total = s * s * g.in_channels * len;
  const bool same = geom.batch == g.batch && geom.in_channels == g.in_channels && geom.height == g.height &&
                    geom.width == g.width && geom.stride == g.stride && geom.pad == g.pad &&
                    buffer.size() == total;
  geom = g;
  phase_h = ph;
  phase_w = pw;
  sample_stride = ss;
  row_len = len;
  if (!same) buffer.assign(total, T(0));

  const std::size_t c_in = g.in_channels, plane = g.height * g.width;
  parallel_for(g.batch, [&](std::size_t n0, std::size_t n1) {
    for (std::size_t n = n0; n < n1; ++n) {
      for (std::size_t c = 0; c < c_in; ++c) {
        const T* src = x.data() + (n * c_in + c) * plane;
        for (std::size_t iy = 0; iy < g.height; ++iy) {
          const std::size_t py = iy + p;
          const std::size_t a = py % s, i = py / s;
          const T* xr = src + iy * g.width;
          if (s == 1) {
            T* dst = buffer.data() + c * len + n * ss + i * pw + p;
            std::memcpy(dst, xr, g.width * sizeof(T));
            continue;
          }
          for (std::size_t b = 0; b < s; ++b) {
            // First column ix with (ix + p) % s == b.
            const std::size_t ix0 = (b + s - p % s) % s;
            if (ix0 >= g.width) continue;
            T* dst = buffer.data() + ((a * s + b) * c_in + c) * len + n * ss + i * pw + (ix0 + p) / s;
            for (std::size_t ix = ix0; ix < g.width; ix += s) *dst++ = xr[ix];
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> conv2d_forward(const PhasedInput<T>& input, const Tensor<T>& weight) {
  const ConvGeometry& g = input.geom;
  if (weight.shape() != Shape{g.out_channels, g.in_channels, g.kernel, g.kernel}) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " does not match geometry");
  }
  const std::size_t kk = g.kernel * g.kernel, k = g.in_channels * kk, m = g.out_channels;
  std::vector<T> coef(k * m);
  for (std::size_t oc = 0; oc < m; ++oc)
    for (std::size_t j = 0; j < k; ++j) coef[j * m + oc] = weight[oc * k + j];
  std::vector<std::size_t> offsets(k);
  std::vector<const T*> rows(k);
  for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const std::size_t j = ic * kk + ky * g.kernel + kx;
        rows[j] = input.row(input.tap_phase(ky, kx), ic);
        offsets[j] = input.tap_offset(ky, kx);
      }
    }
  }
  Tensor<T> y(g.output_shape());
  const std::size_t pw = input.phase_w, ss = input.sample_stride;
  const std::size_t len = round_up(g.out_height * pw, kLanes<T>);
  const std::size_t plane = g.out_height * g.out_width;
  parallel_for(g.batch, [&](std::size_t n0, std::size_t n1) {
    std::vector<const T*> src(k);
    std::vector<T> wide(m * len);
    for (std::size_t n = n0; n < n1; ++n) {
      for (std::size_t j = 0; j < k; ++j) src[j] = rows[j] + n * ss + offsets[j];
      shift_gemm(src.data(), coef.data(), m, k, len, wide.data(), len);
      for (std::size_t oc = 0; oc < m; ++oc) {
        T* dst = y.data() + (n * m + oc) * plane;
        const T* w = wide.data() + oc * len;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          std::memcpy(dst + oy * g.out_width, w + oy * pw, g.out_width * sizeof(T));
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& dy, const Tensor<T>& weight, const ConvGeometry& g,
                            ConvScratch<T>& scratch) {
  if (weight.shape() != Shape{g.out_channels, g.in_channels, g.kernel, g.kernel}) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " does not match geometry");
  }
  const std::size_t s = g.stride, p = g.pad, kk = g.kernel * g.kernel;
  const std::size_t ph = ceil_div(g.height + 2 * p, s), pw = ceil_div(g.width + 2 * p, s), ss = ph * pw;
  std::size_t grid_len = 0;
  const T* grid = fill_dy_grid(dy, g, pw, ss, scratch, grid_len);

  // Per phase: the taps landing on it, their coefficients [oc*taps + t][ic]
  // and the negative shift into the dy grid.
  struct Phase {
    std::vector<T> coef;
    std::vector<const T*> rows;
    std::vector<std::size_t> back;
  };
  std::vector<Phase> phases(s * s);
  const std::size_t c_in = g.in_channels;
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        Phase& ph_ = phases[(ky % s) * s + kx % s];
        ph_.rows.push_back(grid + oc * grid_len);
        ph_.back.push_back((ky / s) * pw + kx / s);
        for (std::size_t ic = 0; ic < c_in; ++ic) {
          ph_.coef.push_back(weight[(oc * c_in + ic) * kk + ky * g.kernel + kx]);
        }
      }
    }
  }

  Tensor<T> dx(Shape{g.batch, c_in, g.height, g.width});
  const std::size_t len = round_up(ss, kLanes<T>);
  const std::size_t plane = g.height * g.width;
  parallel_for(g.batch, [&](std::size_t n0, std::size_t n1) {
    std::vector<T> wide(c_in * len);
    std::vector<const T*> src;
    for (std::size_t n = n0; n < n1; ++n) {
      for (std::size_t a = 0; a < s; ++a) {
        // Phase rows i whose padded row i*s + a is inside the input.
        const std::size_t i0 = a >= p ? 0 : ceil_div(p - a, s);
        for (std::size_t b = 0; b < s; ++b) {
          const std::size_t j0 = b >= p ? 0 : ceil_div(p - b, s);
          const std::size_t ix0 = j0 * s + b - p;
          if (ix0 >= g.width || i0 * s + a - p >= g.height) continue;
          const Phase& phase = phases[a * s + b];
          const std::size_t k = phase.rows.size();
          if (k == 0) {
            std::fill(wide.begin(), wide.end(), T(0));
          } else {
            src.resize(k);
            for (std::size_t j = 0; j < k; ++j) src[j] = phase.rows[j] + n * ss - phase.back[j];
            shift_gemm(src.data(), phase.coef.data(), c_in, k, len, wide.data(), len);
          }
          for (std::size_t ic = 0; ic < c_in; ++ic) {
            T* dst = dx.data() + (n * c_in + ic) * plane;
            const T* w = wide.data() + ic * len;
            for (std::size_t i = i0, iy = i0 * s + a - p; iy < g.height; ++i, iy += s) {
              const T* wr = w + i * pw + j0;
              T* dr = dst + iy * g.width;
              for (std::size_t ix = ix0; ix < g.width; ix += s) dr[ix] = *wr++;
            }
          }
        }
      }
    }
  });
  return dx;
}

template <typename T>
void conv2d_weight_grad(const PhasedInput<T>& input, const Tensor<T>& dy, std::span<T> dweight,
                        ConvScratch<T>& scratch) {
  const ConvGeometry& g = input.geom;
  const std::size_t kk = g.kernel * g.kernel, k = g.in_channels * kk, m = g.out_channels;
  if (dweight.size() != m * k) throw ShapeError("conv2d: weight gradient has the wrong size");
  std::size_t grid_len = 0;
  const T* grid = fill_dy_grid(dy, g, input.phase_w, input.sample_stride, scratch, grid_len);

  std::vector<const T*> cols(k);
  for (std::size_t ic = 0; ic < g.in_channels; ++ic)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx)
        cols[ic * kk + ky * g.kernel + kx] = input.row(input.tap_phase(ky, kx), ic) + input.tap_offset(ky, kx);
  std::vector<const T*> rows(m);
  for (std::size_t oc = 0; oc < m; ++oc) rows[oc] = grid + oc * grid_len;

  const std::size_t total = round_up(g.batch * input.sample_stride, kLanes<T>);
  const std::size_t tile = 64 * kLanes<T>;
  // Bound the partial-sum buffer; rows beyond the cap are handled in passes.
  const std::size_t cap_rows = std::max<std::size_t>(4, (std::size_t{16} << 20) / (k * sizeof(Vec<T>)) / 4 * 4);
  const std::size_t blocks = (m + 3) / 4;
  parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
    const std::size_t r_end = std::min(m, b1 * 4);
    std::vector<Vec<T>> part;
    for (std::size_t r0 = b0 * 4; r0 < r_end; r0 += cap_rows) {
      const std::size_t rows_here = std::min(cap_rows, r_end - r0);
      part.assign(rows_here * k, Vec<T>{});
      for (std::size_t t0 = 0; t0 < total; t0 += tile) {
        const std::size_t t1 = std::min(total, t0 + tile);
        dot_rows(rows.data() + r0, rows_here, cols.data(), k, t0, t1, part.data());
      }
      for (std::size_t r = 0; r < rows_here; ++r)
        for (std::size_t j = 0; j < k; ++j) dweight[(r0 + r) * k + j] += hsum<T>(part[r * k + j]);
    }
  });
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t pad) {
  const auto g = ConvGeometry::make(x.shape(), k.shape(), stride, pad);
  return detail::conv2d_forward(detail::PhasedInput<T>::build(x, g), k);
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& k, const Shape& x_shape, std::size_t stride,
                                std::size_t pad) {
  const auto g = ConvGeometry::make(x_shape, k.shape(), stride, pad);
  detail::ConvScratch<T> scratch;
  return detail::conv2d_input_grad(dy, k, g, scratch);
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& dy, const Tensor<T>& x, const Shape& k_shape, std::size_t stride,
                                 std::size_t pad) {
  const auto g = ConvGeometry::make(x.shape(), k_shape, stride, pad);
  Tensor<T> dk(k_shape);
  detail::ConvScratch<T> scratch;
  detail::conv2d_weight_grad(detail::PhasedInput<T>::build(x, g), dy, dk.values(), scratch);
  return dk;
}

#define LCT_INSTANTIATE_CONV(T)                                                                           \
  template struct detail::PhasedInput<T>;                                                                 \
  template Tensor<T> detail::conv2d_forward(const detail::PhasedInput<T>&, const Tensor<T>&);             \
  template Tensor<T> detail::conv2d_input_grad(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&,   \
                                               detail::ConvScratch<T>&);                                  \
  template void detail::conv2d_weight_grad(const detail::PhasedInput<T>&, const Tensor<T>&, std::span<T>, \
                                           detail::ConvScratch<T>&);                                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, const Shape&, std::size_t, \
                                           std::size_t);                                                  \
  template Tensor<T> conv2d_backward_weight(const Tensor<T>&, const Tensor<T>&, const Shape&, std::size_t, \
                                            std::size_t);

LCT_INSTANTIATE_CONV(float)
LCT_INSTANTIATE_CONV(double)

#undef LCT_INSTANTIATE_CONV

}  // namespace lct
