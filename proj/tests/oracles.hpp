#pragma once

// Naive reference implementations used only by the tests. Each one is the
// most literal loop nest for its operation, in double, with no shared code
// paths into the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "lct/tensor.hpp"

namespace oracle {

using lct::TensorD;

inline TensorD conv2d(const TensorD& x, const TensorD& k, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), ks = k.dim(2);
  const std::size_t oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
  TensorD y(lct::Shape{n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < ks; ++ky)
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad);
                const long ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
                acc += x.at({b, c, std::size_t(iy), std::size_t(ix)}) * k.at({o, c, ky, kx});
              }
          y.at({b, o, oy, ox}) = acc;
        }
  return y;
}

// dL/dX for L = sum(dy * conv(x, k)).
inline TensorD conv2d_dx(const TensorD& dy, const TensorD& k, const lct::Shape& xs, std::size_t stride,
                         std::size_t pad) {
  TensorD dx(xs);
  const std::size_t ks = k.dim(2);
  for (std::size_t b = 0; b < dy.dim(0); ++b)
    for (std::size_t o = 0; o < dy.dim(1); ++o)
      for (std::size_t oy = 0; oy < dy.dim(2); ++oy)
        for (std::size_t ox = 0; ox < dy.dim(3); ++ox)
          for (std::size_t c = 0; c < xs[1]; ++c)
            for (std::size_t ky = 0; ky < ks; ++ky)
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad);
                const long ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(xs[2]) || ix >= long(xs[3])) continue;
                dx.at({b, c, std::size_t(iy), std::size_t(ix)}) += dy.at({b, o, oy, ox}) * k.at({o, c, ky, kx});
              }
  return dx;
}

inline TensorD conv2d_dk(const TensorD& dy, const TensorD& x, const lct::Shape& ksh, std::size_t stride,
                         std::size_t pad) {
  TensorD dk(ksh);
  const std::size_t ks = ksh[2];
  for (std::size_t b = 0; b < dy.dim(0); ++b)
    for (std::size_t o = 0; o < dy.dim(1); ++o)
      for (std::size_t oy = 0; oy < dy.dim(2); ++oy)
        for (std::size_t ox = 0; ox < dy.dim(3); ++ox)
          for (std::size_t c = 0; c < ksh[1]; ++c)
            for (std::size_t ky = 0; ky < ks; ++ky)
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad);
                const long ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(x.dim(2)) || ix >= long(x.dim(3))) continue;
                dk.at({o, c, ky, kx}) += dy.at({b, o, oy, ox}) * x.at({b, c, std::size_t(iy), std::size_t(ix)});
              }
  return dk;
}

inline std::vector<double> matvec(const TensorD& w, const TensorD& x, const TensorD& b) {
  std::vector<double> out(w.dim(0));
  for (std::size_t i = 0; i < w.dim(0); ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < w.dim(1); ++j) acc += w.at({i, j}) * x[j];
    out[i] = acc + b[i];
  }
  return out;
}

// Kahan-compensated sum.
inline double kahan(const std::vector<double>& v) {
  double s = 0, c = 0;
  for (double x : v) {
    const double y = x - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s;
}

// Group standardization of one sample's vector, two-pass.
inline std::vector<double> group_normalize(const std::vector<double>& z, std::size_t groups, double eps) {
  const std::size_t m = z.size() / groups;
  std::vector<double> out(z.size());
  for (std::size_t g = 0; g < groups; ++g) {
    double mu = 0;
    for (std::size_t i = 0; i < m; ++i) mu += z[g * m + i];
    mu /= double(m);
    double var = 0;
    for (std::size_t i = 0; i < m; ++i) var += (z[g * m + i] - mu) * (z[g * m + i] - mu);
    var /= double(m);
    for (std::size_t i = 0; i < m; ++i) out[g * m + i] = (z[g * m + i] - mu) / std::sqrt(var + eps);
  }
  return out;
}

// Spearman as Pearson over average ranks computed by brute-force counting.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double below = 0, equal = 0;
      for (double u : v) {
        if (u < v[i]) below += 1;
        if (u == v[i]) equal += 1;
      }
      r[i] = below + (equal + 1) / 2;  // 1-based average rank
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double max_abs_diff(const TensorD& a, const TensorD& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
