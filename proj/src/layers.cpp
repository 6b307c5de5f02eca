#include "lct/layers.hpp"

#include <algorithm>
#include <cmath>

namespace lct {
namespace {

void require_cache(bool cached, const char* kind) {
  if (!cached) throw StateError(std::string(kind) + ": backward called without a cached forward");
}

template <typename T>
void add_into(std::span<T> grad, std::size_t i, double v) {
  grad[i] += static_cast<T>(v);
}

// Eight interleaved double accumulators. The order is fixed, so results are
// reproducible, and the independent lanes let the compiler vectorize.
struct Lanes {
  double v[8] = {};
  template <typename F>
  void run(std::size_t n, F term) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
      for (std::size_t j = 0; j < 8; ++j) v[j] += term(i + j);
    for (; i < n; ++i) v[i & 7] += term(i);
  }
  double total() const {
    double s = 0;
    for (double a : v) s += a;
    return s;
  }
};

}  // namespace

// ---- registry

template <typename T>
void ParamRegistry<T>::claim(const std::string& name) {
  if (!names_.emplace(name, true).second) throw ConfigError("duplicate parameter name '" + name + "'");
}

template <typename T>
void ParamRegistry<T>::add(const std::string& name, Tensor<T>& tensor, ParamRole role) {
  claim(name);
  const bool decay = policy_ == DecayPolicy::all || role == ParamRole::weight;
  params_.push_back({name, &tensor, decay});
}

template <typename T>
void ParamRegistry<T>::add_buffer(const std::string& name, Tensor<T>& tensor) {
  claim(name);
  buffers_.push_back({name, &tensor});
}

template <typename T>
Tensor<T>* ParamRegistry<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  for (const auto& b : buffers_)
    if (b.name == name) return b.tensor;
  return nullptr;
}

template <typename T>
std::size_t ParamRegistry<T>::total_params() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor->size();
  return n;
}

// ---- conv

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng)
    : weight(rng_normal<T>(rng, Shape{out, in, kernel, kernel}, 0.0,
                           std::sqrt(2.0 / static_cast<double>(kernel * kernel * in)))),
      stride(stride),
      pad(kernel / 2) {}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode) {
  const auto g = ConvGeometry::make(x.shape(), weight.shape(), stride, pad);
  input_.assign(x, g);
  cached_ = true;
  return detail::conv2d_forward(input_, weight);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  require_cache(cached_, "conv2d");
  detail::conv2d_weight_grad(input_, dy, weight.grad(), scratch_);
  return detail::conv2d_input_grad(dy, weight, input_.geom, scratch_);
}

template <typename T>
void Conv2d<T>::collect(ParamRegistry<T>& registry, const std::string& prefix) {
  registry.add(prefix + "weight", weight, ParamRole::weight);
}

// ---- batch norm

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, double momentum, double epsilon)
    : gamma(Shape{channels}, T(1)),
      beta(Shape{channels}, T(0)),
      running_mean(Shape{channels}, T(0)),
      running_var(Shape{channels}, T(1)),
      momentum(momentum),
      epsilon(epsilon) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  const std::size_t c = gamma.size();
  if (x.rank() != 4 || x.dim(1) != c) {
    throw ShapeError("batchnorm2d: expected N x " + std::to_string(c) + " x H x W, got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
  const double count = static_cast<double>(n * plane);
  std::vector<double> mean(c), rstd(c);
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      Lanes s;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * plane;
        s.run(plane, [p](std::size_t i) { return double(p[i]); });
      }
      const double mu = s.total() / count;
      Lanes sq;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * plane;
        sq.run(plane, [p, mu](std::size_t i) { return (double(p[i]) - mu) * (double(p[i]) - mu); });
      }
      const double v = sq.total() / count;
      mean[ch] = mu;
      rstd[ch] = 1.0 / std::sqrt(v + epsilon);
      const double unbiased = count > 1 ? v * count / (count - 1) : v;
      running_mean[ch] = static_cast<T>((1 - momentum) * running_mean[ch] + momentum * mu);
      running_var[ch] = static_cast<T>((1 - momentum) * running_var[ch] + momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = running_var[ch];
      if (!std::isfinite(v) || v < 0 || !std::isfinite(static_cast<double>(running_mean[ch]))) {
        throw StateError("batchnorm2d: running statistics are not initialized (channel " + std::to_string(ch) +
                         ")");
      }
      mean[ch] = running_mean[ch];
      rstd[ch] = 1.0 / std::sqrt(v + epsilon);
    }
  }
  Tensor<T> y(x.shape());
  xhat_ = Tensor<T>(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * plane;
      const T mu = static_cast<T>(mean[ch]), r = static_cast<T>(rstd[ch]);
      const T gm = gamma[ch], bt = beta[ch];
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (x[off + i] - mu) * r;
        xhat_[off + i] = h;
        y[off + i] = gm * h + bt;
      }
    }
  }
  rstd_ = std::move(rstd);
  mode_ = mode;
  cached_ = true;
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  require_cache(cached_, "batchnorm2d");
  if (dy.shape() != xhat_.shape()) throw ShapeError("batchnorm2d: gradient shape mismatch");
  const std::size_t n = dy.dim(0), c = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  const double count = static_cast<double>(n * plane);
  auto dgamma = gamma.grad();
  auto dbeta = beta.grad();
  Tensor<T> dx(dy.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    Lanes ldy, ldyx;
    for (std::size_t b = 0; b < n; ++b) {
      const T* g = dy.data() + (b * c + ch) * plane;
      const T* h = xhat_.data() + (b * c + ch) * plane;
      ldy.run(plane, [g](std::size_t i) { return double(g[i]); });
      ldyx.run(plane, [g, h](std::size_t i) { return double(g[i]) * double(h[i]); });
    }
    const double sum_dy = ldy.total(), sum_dy_xhat = ldyx.total();
    add_into(dgamma, ch, sum_dy_xhat);
    add_into(dbeta, ch, sum_dy);
    const double scale = static_cast<double>(gamma[ch]) * rstd_[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      if (mode_ == Mode::train) {
        const double mdy = sum_dy / count, mdyx = sum_dy_xhat / count;
        for (std::size_t i = 0; i < plane; ++i) {
          dx[off + i] = static_cast<T>(scale * (dy[off + i] - mdy - xhat_[off + i] * mdyx));
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) dx[off + i] = static_cast<T>(scale * dy[off + i]);
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(ParamRegistry<T>& registry, const std::string& prefix) {
  registry.add(prefix + "weight", gamma, ParamRole::affine);
  registry.add(prefix + "bias", beta, ParamRole::affine);
  registry.add_buffer(prefix + "running_mean", running_mean);
  registry.add_buffer(prefix + "running_var", running_var);
}

// ---- pointwise

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  x_ = x;
  cached_ = true;
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy) {
  require_cache(cached_, "relu");
  if (dy.shape() != x_.shape()) throw ShapeError("relu: gradient shape mismatch");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = x_[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x, Mode) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  y_ = y;
  cached_ = true;
  return y;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& dy) {
  require_cache(cached_, "sigmoid");
  if (dy.shape() != y_.shape()) throw ShapeError("sigmoid: gradient shape mismatch");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * y_[i] * (T(1) - y_[i]);
  return dx;
}

// ---- linear

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(rng_uniform<T>(rng, Shape{out, in}, -1.0 / std::sqrt(double(in)), 1.0 / std::sqrt(double(in)))),
      bias(Shape{out}) {}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode) {
  const std::size_t out = weight.dim(0), in = weight.dim(1);
  if (x.rank() != 2 || x.dim(1) != in) {
    throw ShapeError("linear: expected N x " + std::to_string(in) + ", got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0);
  Tensor<T> y(Shape{n, out});
  for (std::size_t b = 0; b < n; ++b) {
    const T* xr = x.data() + b * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wr = weight.data() + o * in;
      T acc = 0;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      y[b * out + o] = acc + bias[o];
    }
  }
  x_ = x;
  cached_ = true;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  require_cache(cached_, "linear");
  const std::size_t out = weight.dim(0), in = weight.dim(1), n = x_.dim(0);
  if (dy.shape() != Shape{n, out}) throw ShapeError("linear: gradient shape mismatch");
  auto dw = weight.grad();
  auto db = bias.grad();
  Tensor<T> dx(x_.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy[b * out + o];
      db[o] += g;
      const T* wr = weight.data() + o * in;
      T* dwr = dw.data() + o * in;
      const T* xr = x_.data() + b * in;
      T* dxr = dx.data() + b * in;
      for (std::size_t i = 0; i < in; ++i) {
        dwr[i] += g * xr[i];
        dxr[i] += g * wr[i];
      }
    }
  }
  return dx;
}

template <typename T>
void Linear<T>::collect(ParamRegistry<T>& registry, const std::string& prefix) {
  registry.add(prefix + "weight", weight, ParamRole::weight);
  registry.add(prefix + "bias", bias, ParamRole::affine);
}

// ---- pooling

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected N x C x H x W, got " + to_string(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y(Shape{x.dim(0), x.dim(1)});
  for (std::size_t i = 0; i < nc; ++i) {
    double s = 0;
    const T* p = x.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    y[i] = static_cast<T>(s / static_cast<double>(plane));
  }
  x_shape_ = x.shape();
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) {
  require_cache(!x_shape_.empty(), "global_avg_pool");
  if (dy.shape() != Shape{x_shape_[0], x_shape_[1]}) throw ShapeError("global_avg_pool: gradient shape mismatch");
  const std::size_t plane = x_shape_[2] * x_shape_[3];
  Tensor<T> dx(x_shape_);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const T g = dy[i] / static_cast<T>(plane);
    std::fill_n(dx.data() + i * plane, plane, g);
  }
  return dx;
}

template <typename T>
Tensor<T> AvgPool2d<T>::forward(const Tensor<T>& x, Mode) {
  if (x.rank() != 4 || x.dim(2) < kernel || x.dim(3) < kernel || stride == 0) {
    throw GeometryError("avg_pool2d: window " + std::to_string(kernel) + " does not fit " + to_string(x.shape()));
  }
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  const std::size_t nc = x.dim(0) * x.dim(1);
  Tensor<T> y(Shape{x.dim(0), x.dim(1), oh, ow});
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  for (std::size_t i = 0; i < nc; ++i) {
    const T* p = x.data() + i * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T s = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) s += p[(oy * stride + ky) * w + ox * stride + kx];
        y[(i * oh + oy) * ow + ox] = s * inv;
      }
  }
  x_shape_ = x.shape();
  return y;
}

template <typename T>
Tensor<T> AvgPool2d<T>::backward(const Tensor<T>& dy) {
  require_cache(!x_shape_.empty(), "avg_pool2d");
  const std::size_t h = x_shape_[2], w = x_shape_[3], oh = dy.dim(2), ow = dy.dim(3);
  const std::size_t nc = x_shape_[0] * x_shape_[1];
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  Tensor<T> dx(x_shape_);
  for (std::size_t i = 0; i < nc; ++i) {
    T* p = dx.data() + i * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T g = dy[(i * oh + oy) * ow + ox] * inv;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) p[(oy * stride + ky) * w + ox * stride + kx] += g;
      }
  }
  return dx;
}

// ---- optimizer

template <typename T>
void Sgd<T>::step(const ParamRegistry<T>& registry, double lr) {
  for (const auto& p : registry.params()) {
    if (!p.tensor->has_grad()) throw StateError("sgd: parameter '" + p.name + "' has no gradient");
  }
  for (const auto& p : registry.params()) {
    Tensor<T>& param = *p.tensor;
    auto it = velocity_.find(p.name);
    if (it == velocity_.end()) it = velocity_.emplace(p.name, Tensor<T>(param.shape())).first;
    Tensor<T>& v = it->second;
    const auto g = param.grad();
    const T m = static_cast<T>(momentum), wd = p.decay ? static_cast<T>(weight_decay) : T(0);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < param.size(); ++i) {
      v[i] = m * v[i] + (g[i] + wd * param[i]);
      param[i] -= rate * v[i];
    }
    param.clear_grad();
  }
}

#define LCT_INSTANTIATE_LAYERS(T)     \
  template class ParamRegistry<T>;    \
  template class Conv2d<T>;           \
  template class BatchNorm2d<T>;      \
  template class ReLU<T>;             \
  template class Sigmoid<T>;          \
  template class Linear<T>;           \
  template class GlobalAvgPool<T>;    \
  template class AvgPool2d<T>;        \
  template class Sgd<T>;

LCT_INSTANTIATE_LAYERS(float)
LCT_INSTANTIATE_LAYERS(double)

#undef LCT_INSTANTIATE_LAYERS

}  // namespace lct
