#include "lct/attention.hpp"

#include <cmath>

namespace lct {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none: return "none";
    case AttentionKind::se: return "se";
    case AttentionKind::lct: return "lct";
    case AttentionKind::se_plus: return "se_plus";
  }
  return "?";
}

std::string to_string(InitMode mode) {
  switch (mode) {
    case InitMode::w0_b1: return "w0_b1";
    case InitMode::w0_b0: return "w0_b0";
    case InitMode::w1_b0: return "w1_b0";
  }
  return "?";
}

AttentionKind parse_attention_kind(const std::string& text) {
  if (text == "none") return AttentionKind::none;
  if (text == "se") return AttentionKind::se;
  if (text == "lct") return AttentionKind::lct;
  if (text == "se_plus" || text == "se+") return AttentionKind::se_plus;
  throw ConfigError("unknown attention kind '" + text + "' (expected none, se, lct, se+)");
}

InitMode parse_init_mode(const std::string& text) {
  if (text == "w0_b1") return InitMode::w0_b1;
  if (text == "w0_b0") return InitMode::w0_b0;
  if (text == "w1_b0") return InitMode::w1_b0;
  throw ConfigError("unknown init mode '" + text + "' (expected w0_b1, w0_b0, w1_b0)");
}

void AttentionConfig::validate() const {
  if (kind == AttentionKind::none) return;
  if (channels == 0) throw ConfigError("attention: channels must be positive");
  if (!(epsilon > 0)) throw ConfigError("attention: epsilon must be positive");
  if (kind == AttentionKind::se || kind == AttentionKind::se_plus) {
    if (reduction == 0 || channels % reduction != 0) {
      throw ConfigError("attention: channels " + std::to_string(channels) + " not divisible by reduction " +
                        std::to_string(reduction));
    }
  }
  if (kind == AttentionKind::lct || kind == AttentionKind::se_plus) {
    if (groups == 0) throw ConfigError("attention: groups must be positive");
    if (channels % effective_groups() != 0) {
      throw GroupError("attention: channels " + std::to_string(channels) + " not divisible by " +
                       std::to_string(effective_groups()) + " groups");
    }
  }
}

namespace {

template <typename T>
void check_nc(const Tensor<T>& t, std::size_t n, std::size_t c, const char* what) {
  if (t.shape() != Shape{n, c}) {
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(n) + "," + std::to_string(c) + "], got " +
                     to_string(t.shape()));
  }
}

template <typename T>
void check_feature_map(const Tensor<T>& x, const char* what) {
  if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected N x C x H x W, got " + to_string(x.shape()));
}

}  // namespace

template <typename T>
Tensor<T> aggregate(const Tensor<T>& x) {
  check_feature_map(x, "aggregate");
  const std::size_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> z(Shape{x.dim(0), x.dim(1)});
  for (std::size_t i = 0; i < nc; ++i) {
    double s = 0;
    const T* p = x.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    z[i] = static_cast<T>(s / static_cast<double>(plane));
  }
  return z;
}

template <typename T>
Tensor<T> aggregate_backward(const Tensor<T>& dz, const Shape& x_shape) {
  check_nc(dz, x_shape.at(0), x_shape.at(1), "aggregate_backward");
  const std::size_t plane = x_shape[2] * x_shape[3];
  Tensor<T> dx(x_shape);
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const T g = static_cast<T>(static_cast<double>(dz[i]) / static_cast<double>(plane));
    std::fill_n(dx.data() + i * plane, plane, g);
  }
  return dx;
}

template <typename T>
Normalized<T> normalize(const Tensor<T>& z, std::size_t groups, double epsilon) {
  if (z.rank() != 2) throw ShapeError("normalize: expected N x C, got " + to_string(z.shape()));
  const std::size_t n = z.dim(0), c = z.dim(1);
  if (groups == 0 || c % groups != 0) {
    throw GroupError("normalize: " + std::to_string(c) + " channels not divisible by " + std::to_string(groups) +
                     " groups");
  }
  const std::size_t m = c / groups;
  Normalized<T> r{Tensor<T>(z.shape()), std::vector<double>(n * groups), groups};
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t g = 0; g < groups; ++g) {
      const T* v = z.data() + s * c + g * m;
      double mu = 0;
      for (std::size_t i = 0; i < m; ++i) mu += v[i];
      mu /= static_cast<double>(m);
      double var = 0;
      for (std::size_t i = 0; i < m; ++i) var += (v[i] - mu) * (v[i] - mu);
      var /= static_cast<double>(m);
      const double rstd = 1.0 / std::sqrt(var + epsilon);
      r.rstd[s * groups + g] = rstd;
      T* o = r.out.data() + s * c + g * m;
      for (std::size_t i = 0; i < m; ++i) o[i] = static_cast<T>((v[i] - mu) * rstd);
    }
  }
  return r;
}

template <typename T>
Tensor<T> normalize_backward(const Tensor<T>& dzhat, const Normalized<T>& fwd) {
  if (dzhat.shape() != fwd.out.shape()) throw ShapeError("normalize_backward: gradient shape mismatch");
  const std::size_t n = dzhat.dim(0), c = dzhat.dim(1), groups = fwd.groups, m = c / groups;
  Tensor<T> dz(dzhat.shape());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t off = s * c + g * m;
      double mean_d = 0, mean_dx = 0;
      for (std::size_t i = 0; i < m; ++i) {
        mean_d += dzhat[off + i];
        mean_dx += static_cast<double>(dzhat[off + i]) * fwd.out[off + i];
      }
      mean_d /= static_cast<double>(m);
      mean_dx /= static_cast<double>(m);
      const double rstd = fwd.rstd[s * groups + g];
      for (std::size_t i = 0; i < m; ++i) {
        dz[off + i] = static_cast<T>(rstd * (dzhat[off + i] - mean_d - fwd.out[off + i] * mean_dx));
      }
    }
  }
  return dz;
}

template <typename T>
Tensor<T> transform(const Tensor<T>& zhat, const Tensor<T>& w, const Tensor<T>& b) {
  if (zhat.rank() != 2 || w.shape() != Shape{zhat.dim(1)} || b.shape() != w.shape()) {
    throw ShapeError("transform: zhat " + to_string(zhat.shape()) + ", w " + to_string(w.shape()) + ", b " +
                     to_string(b.shape()) + " do not conform");
  }
  const std::size_t n = zhat.dim(0), c = zhat.dim(1);
  Tensor<T> a(zhat.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < c; ++k) a[s * c + k] = w[k] * zhat[s * c + k] + b[k];
  return a;
}

template <typename T>
Tensor<T> transform_backward(const Tensor<T>& da, const Tensor<T>& zhat, const Tensor<T>& w, std::span<T> dw,
                             std::span<T> db) {
  if (da.shape() != zhat.shape()) throw ShapeError("transform_backward: gradient shape mismatch");
  const std::size_t n = da.dim(0), c = da.dim(1);
  Tensor<T> dzhat(da.shape());
  for (std::size_t k = 0; k < c; ++k) {
    T sw = 0, sb = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const T g = da[s * c + k];
      sw += g * zhat[s * c + k];
      sb += g;
      dzhat[s * c + k] = g * w[k];
    }
    dw[k] += sw;
    db[k] += sb;
  }
  return dzhat;
}

template <typename T>
Tensor<T> gate(const Tensor<T>& x, const Tensor<T>& g) {
  check_feature_map(x, "fuse");
  check_nc(g, x.dim(0), x.dim(1), "fuse");
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T s = g[i];
    const T* p = x.data() + i * plane;
    T* q = y.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) q[j] = p[j] * s;
  }
  return y;
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& x, const Tensor<T>& a) {
  Tensor<T> g(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = sigmoid(a[i]);
  return gate(x, g);
}

template <typename T>
FuseGrads<T> fuse_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& a) {
  if (dy.shape() != x.shape()) throw ShapeError("fuse_backward: gradient shape mismatch");
  check_nc(a, x.dim(0), x.dim(1), "fuse_backward");
  const std::size_t plane = x.dim(2) * x.dim(3);
  FuseGrads<T> r{Tensor<T>(x.shape()), Tensor<T>(a.shape())};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T s = sigmoid(a[i]);
    const T* g = dy.data() + i * plane;
    const T* p = x.data() + i * plane;
    T* q = r.dx.data() + i * plane;
    double dot = 0;
    for (std::size_t j = 0; j < plane; ++j) {
      q[j] = g[j] * s;
      dot += static_cast<double>(g[j]) * p[j];
    }
    r.da[i] = static_cast<T>(dot * s * (1 - s));
  }
  return r;
}

template <typename T>
Excited<T> se_excite(const Tensor<T>& z, const SeParams<T>& p) {
  if (z.rank() != 2) throw ShapeError("se_excite: expected N x C, got " + to_string(z.shape()));
  const std::size_t n = z.dim(0), c = z.dim(1), h = p.w1.dim(0);
  if (p.w1.shape() != Shape{h, c} || p.b1.shape() != Shape{h} || p.w2.shape() != Shape{c, h} ||
      p.b2.shape() != Shape{c}) {
    throw ConfigError("se_excite: FC shapes W1 " + to_string(p.w1.shape()) + ", W2 " + to_string(p.w2.shape()) +
                      " do not match C=" + std::to_string(c));
  }
  Excited<T> r{Tensor<T>(Shape{n, c}), Tensor<T>(Shape{n, h})};
  for (std::size_t s = 0; s < n; ++s) {
    const T* zs = z.data() + s * c;
    for (std::size_t j = 0; j < h; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < c; ++k) acc += p.w1[j * c + k] * zs[k];
      acc += p.b1[j];
      r.hidden[s * h + j] = acc > T(0) ? acc : T(0);
    }
    for (std::size_t k = 0; k < c; ++k) {
      T acc = 0;
      for (std::size_t j = 0; j < h; ++j) acc += p.w2[k * h + j] * r.hidden[s * h + j];
      r.scores[s * c + k] = acc + p.b2[k];
    }
  }
  return r;
}

template <typename T>
SeGrads<T> se_excite_backward(const Tensor<T>& dscores, const Tensor<T>& z, const Excited<T>& fwd,
                              const SeParams<T>& p) {
  const std::size_t n = z.dim(0), c = z.dim(1), h = p.w1.dim(0);
  check_nc(dscores, n, c, "se_excite_backward");
  SeGrads<T> r{Tensor<T>(z.shape()), Tensor<T>(p.w1.shape()), Tensor<T>(p.b1.shape()), Tensor<T>(p.w2.shape()),
               Tensor<T>(p.b2.shape())};
  std::vector<T> dh(h);
  for (std::size_t s = 0; s < n; ++s) {
    const T* ds = dscores.data() + s * c;
    const T* hs = fwd.hidden.data() + s * h;
    std::fill(dh.begin(), dh.end(), T(0));
    for (std::size_t k = 0; k < c; ++k) {
      r.db2[k] += ds[k];
      for (std::size_t j = 0; j < h; ++j) {
        r.dw2[k * h + j] += ds[k] * hs[j];
        dh[j] += ds[k] * p.w2[k * h + j];
      }
    }
    const T* zs = z.data() + s * c;
    for (std::size_t j = 0; j < h; ++j) {
      if (!(hs[j] > T(0))) continue;
      r.db1[j] += dh[j];
      for (std::size_t k = 0; k < c; ++k) {
        r.dw1[j * c + k] += dh[j] * zs[k];
        r.dz[s * c + k] += dh[j] * p.w1[j * c + k];
      }
    }
  }
  return r;
}

// ---- block

template <typename T>
AttentionBlock<T>::AttentionBlock(const AttentionConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t c = config_.channels;
  switch (config_.kind) {
    case AttentionKind::none: break;
    case AttentionKind::lct: {
      const T w0 = config_.init == InitMode::w1_b0 ? T(1) : T(0);
      const T b0 = config_.init == InitMode::w0_b1 ? T(1) : T(0);
      w = Tensor<T>(Shape{c}, w0);
      b = Tensor<T>(Shape{c}, b0);
      break;
    }
    case AttentionKind::se:
    case AttentionKind::se_plus: {
      const std::size_t h = c / config_.reduction;
      Linear<T> fc1(c, h, rng), fc2(h, c, rng);
      fc1_weight = fc1.weight;
      fc1_bias = fc1.bias;
      fc2_weight = fc2.weight;
      fc2_bias = fc2.bias;
      break;
    }
  }
}

template <typename T>
Tensor<T> AttentionBlock<T>::forward(const Tensor<T>& x, Mode) {
  check_feature_map(x, "attention");
  if (config_.kind != AttentionKind::none && x.dim(1) != config_.channels) {
    throw ShapeError("attention: block configured for " + std::to_string(config_.channels) + " channels, got " +
                     to_string(x.shape()));
  }
  const auto kind = config_.kind;
  const std::size_t g_eff = config_.effective_groups();
  Tensor<T> y;
  Tensor<T> g;
  if (kind == AttentionKind::none) {
    y = x;
    if (recording_) g = Tensor<T>(Shape{x.dim(0), x.dim(1)}, T(1));
  } else {
    z_ = aggregate(x);
    Tensor<T> zhat = z_;
    if (config_.normalizes()) {
      norm_ = normalize(z_, g_eff, config_.epsilon);
      zhat = norm_.out;
    }
    if (kind == AttentionKind::lct) {
      a_ = config_.skip_transform ? zhat : transform(zhat, w, b);
      excited_.reset();
    } else {
      excited_ = se_excite(zhat, SeParams<T>{fc1_weight, fc1_bias, fc2_weight, fc2_bias});
      a_ = excited_->scores;
    }
    g = Tensor<T>(a_.shape());
    for (std::size_t i = 0; i < a_.size(); ++i) g[i] = gate_override_ ? *gate_override_ : sigmoid(a_[i]);
    y = lct::gate(x, g);
    x_ = x;
  }
  cached_ = true;
  if (recording_) {
    record_ = AttentionRecord<T>{kind == AttentionKind::none ? aggregate(x) : z_, g, aggregate(y)};
  }
  return y;
}

template <typename T>
Tensor<T> AttentionBlock<T>::backward(const Tensor<T>& dy) {
  if (!cached_) throw StateError("attention: backward called without a cached forward");
  const auto kind = config_.kind;
  if (kind == AttentionKind::none) return dy;
  if (gate_override_) return lct::gate(dy, Tensor<T>(Shape{x_.dim(0), x_.dim(1)}, *gate_override_));
  auto fused = fuse_backward(dy, x_, a_);
  Tensor<T> dzhat;
  if (kind == AttentionKind::lct) {
    const Tensor<T>& zhat = config_.normalizes() ? norm_.out : z_;
    dzhat = config_.skip_transform ? fused.da : transform_backward(fused.da, zhat, w, w.grad(), b.grad());
  } else {
    const Tensor<T>& zhat = config_.normalizes() ? norm_.out : z_;
    const SeParams<T> p{fc1_weight, fc1_bias, fc2_weight, fc2_bias};
    auto grads = se_excite_backward(fused.da, zhat, *excited_, p);
    auto acc = [](Tensor<T>& t, const Tensor<T>& d) {
      auto gspan = t.grad();
      for (std::size_t i = 0; i < d.size(); ++i) gspan[i] += d[i];
    };
    acc(fc1_weight, grads.dw1);
    acc(fc1_bias, grads.db1);
    acc(fc2_weight, grads.dw2);
    acc(fc2_bias, grads.db2);
    dzhat = std::move(grads.dz);
  }
  const Tensor<T> dz = config_.normalizes() ? normalize_backward(dzhat, norm_) : dzhat;
  Tensor<T> dx = aggregate_backward(dz, x_.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += fused.dx[i];
  return dx;
}

template <typename T>
void AttentionBlock<T>::collect(ParamRegistry<T>& registry, const std::string& prefix) {
  switch (config_.kind) {
    case AttentionKind::none: break;
    case AttentionKind::lct:
      registry.add(prefix + "w", w, ParamRole::affine);
      registry.add(prefix + "b", b, ParamRole::affine);
      break;
    case AttentionKind::se:
    case AttentionKind::se_plus:
      registry.add(prefix + "fc1.weight", fc1_weight, ParamRole::weight);
      registry.add(prefix + "fc1.bias", fc1_bias, ParamRole::affine);
      registry.add(prefix + "fc2.weight", fc2_weight, ParamRole::weight);
      registry.add(prefix + "fc2.bias", fc2_bias, ParamRole::affine);
      break;
  }
}

#define LCT_INSTANTIATE_ATTENTION(T)                                                                         \
  template Tensor<T> aggregate(const Tensor<T>&);                                                            \
  template Tensor<T> aggregate_backward(const Tensor<T>&, const Shape&);                                     \
  template Normalized<T> normalize(const Tensor<T>&, std::size_t, double);                                   \
  template Tensor<T> normalize_backward(const Tensor<T>&, const Normalized<T>&);                             \
  template Tensor<T> transform(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> transform_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<T>,  \
                                        std::span<T>);                                                       \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> gate(const Tensor<T>&, const Tensor<T>&);                                               \
  template FuseGrads<T> fuse_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Excited<T> se_excite(const Tensor<T>&, const SeParams<T>&);                                       \
  template SeGrads<T> se_excite_backward(const Tensor<T>&, const Tensor<T>&, const Excited<T>&,              \
                                         const SeParams<T>&);                                                \
  template class AttentionBlock<T>;

LCT_INSTANTIATE_ATTENTION(float)
LCT_INSTANTIATE_ATTENTION(double)

#undef LCT_INSTANTIATE_ATTENTION

}  // namespace lct
