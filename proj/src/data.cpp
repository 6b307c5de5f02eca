#include "lct/data.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

namespace lct {

NormStats channel_stats(const TensorF& pixels) {
  const std::size_t n = pixels.dim(0), plane = pixels.dim(2) * pixels.dim(3);
  NormStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = pixels.data() + (i * 3 + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) sum += p[j];
    }
    const double mu = sum / double(n * plane);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = pixels.data() + (i * 3 + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) var += (p[j] - mu) * (p[j] - mu);
    }
    s.mean[c] = mu;
    s.std[c] = std::sqrt(var / double(n * plane));
    if (!(s.std[c] > 0)) s.std[c] = 1;  // constant channel
  }
  return s;
}

void standardize(TensorF& pixels, const NormStats& stats) {
  const std::size_t n = pixels.dim(0), plane = pixels.dim(2) * pixels.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      float* p = pixels.data() + (i * 3 + c) * plane;
      const double mu = stats.mean[c], sd = stats.std[c];
      for (std::size_t j = 0; j < plane; ++j) p[j] = static_cast<float>((p[j] - mu) / sd);
    }
}

Dataset read_cifar10_records(const std::string& path, const std::string& split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t n = bytes.size() / kCifarRecord;
  if (bytes.size() % kCifarRecord != 0) {
    throw DataError(path + ": truncated record at byte offset " + std::to_string(n * kCifarRecord) + " (" +
                    std::to_string(bytes.size() - n * kCifarRecord) + " of " + std::to_string(kCifarRecord) +
                    " bytes)");
  }
  if (n == 0) throw DataError(path + ": no records");
  Dataset d;
  d.split = split;
  d.images = TensorF(Shape{n, 3, 32, 32});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9) {
      throw DataError(path + ": label " + std::to_string(rec[0]) + " out of range at byte offset " +
                      std::to_string(i * kCifarRecord));
    }
    d.labels[i] = rec[0];
    float* out = d.images.data() + i * 3072;
    for (std::size_t j = 0; j < 3072; ++j) out[j] = static_cast<float>(rec[1 + j] / 255.0);
  }
  return d;
}

Dataset load_cifar10_binary(const std::string& path, const NormStats* stats) {
  Dataset d = read_cifar10_records(path, stats ? "test" : "train");
  d.stats = stats ? *stats : channel_stats(d.images);
  standardize(d.images, d.stats);
  return d;
}

namespace {

Dataset synth_raw(std::uint64_t seed, std::size_t n, int classes) {
  if (classes < 1) throw ConfigError("synth: classes must be positive");
  if (n < std::size_t(classes)) throw ConfigError("synth: need n >= classes");
  Rng rng(seed);
  Dataset d;
  d.classes = classes;
  d.images = TensorF(Shape{n, 3, 32, 32});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = int(i % std::size_t(classes));
  for (std::size_t i = n; i > 1; --i) std::swap(d.labels[i - 1], d.labels[rng.below(i)]);

  constexpr double pi = std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = d.labels[i];
    const double frac = double(c) / classes;
    const double theta = pi * frac + rng.normal(0, 0.05);
    const double freq = 1.5 + 0.75 * (c % 4);
    const double phase = rng.uniform(0, 2 * pi);
    const double amp = rng.uniform(0.15, 0.3);
    const double ct = std::cos(theta), st = std::sin(theta);
    float* img = d.images.data() + i * 3072;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double tint = 0.08 * std::cos(2 * pi * frac + 2 * pi * double(ch) / 3);
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const double u = (double(x) * ct + double(y) * st) / 32.0;
          double v = 0.5 + amp * std::cos(2 * pi * freq * u + phase) + tint + 0.1 * (u - 0.5) + rng.normal(0, 0.08);
          img[ch * 1024 + y * 32 + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
  }
  return d;
}

}  // namespace

Dataset synth_dataset(std::uint64_t seed, std::size_t n, int classes) {
  Dataset d = synth_raw(seed, n, classes);
  d.stats = channel_stats(d.images);
  standardize(d.images, d.stats);
  return d;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t n, int classes, const NormStats& stats) {
  Dataset d = synth_raw(seed, n, classes);
  d.split = "val";
  d.stats = stats;
  standardize(d.images, d.stats);
  return d;
}

TensorF make_batch(const Dataset& data, const std::vector<std::size_t>& index, const Augment& aug, Rng* rng) {
  const std::size_t c = data.images.dim(1), h = data.images.dim(2), w = data.images.dim(3), plane = h * w;
  TensorF out(Shape{index.size(), c, h, w});
  const bool augment = rng && (aug.hflip || aug.pad_crop);
  for (std::size_t b = 0; b < index.size(); ++b) {
    if (index[b] >= data.size()) throw DataError("batch index out of range");
    const float* src = data.images.data() + index[b] * c * plane;
    float* dst = out.data() + b * c * plane;
    if (!augment) {
      std::copy(src, src + c * plane, dst);
      continue;
    }
    long dy = 0, dx = 0;
    if (aug.pad_crop) {
      dy = long(rng->below(2 * aug.pad + 1)) - long(aug.pad);
      dx = long(rng->below(2 * aug.pad + 1)) - long(aug.pad);
    }
    const bool flip = aug.hflip && rng->below(2) == 1;
    // Reflect padding without the edge pixel, as numpy's "reflect".
    auto reflect = [](long i, long n) {
      if (i < 0) return -i;
      if (i >= n) return 2 * (n - 1) - i;
      return i;
    };
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y) {
        const long sy = reflect(long(y) + dy, long(h));
        for (std::size_t x = 0; x < w; ++x) {
          const long ox = flip ? long(w) - 1 - long(x) : long(x);
          const long sx = reflect(ox + dx, long(w));
          dst[ch * plane + y * w + x] = src[ch * plane + std::size_t(sy) * w + std::size_t(sx)];
        }
      }
  }
  return out;
}

}  // namespace lct
