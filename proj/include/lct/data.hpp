#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lct/rng.hpp"

namespace lct {

struct NormStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> std{1, 1, 1};
};

// Resident N x 3 x H x W images, standardized with `stats`.
struct Dataset {
  TensorF images;
  std::vector<int> labels;
  int classes = 10;
  std::string split = "train";
  NormStats stats;

  std::size_t size() const { return labels.size(); }
};

inline constexpr std::size_t kCifarRecord = 3073;

// Per-channel mean and population std of [0, 1] pixel data (N x 3 x H x W).
NormStats channel_stats(const TensorF& pixels);
// (x - mean) / std per channel, in place.
void standardize(TensorF& pixels, const NormStats& stats);

// Raw CIFAR-10 records mapped to [0, 1], not standardized. Throws IoError when
// the file cannot be read and DataError on truncation or a bad label.
Dataset read_cifar10_records(const std::string& path, const std::string& split = "train");
// Reads and standardizes. Without `stats` the file's own statistics are used
// (it is treated as the training split).
Dataset load_cifar10_binary(const std::string& path, const NormStats* stats = nullptr);

// Procedural 3 x 32 x 32 images: the class sets the orientation and frequency
// of a grating, a colour tint and a ramp. Label counts differ by at most one.
// Returned standardized with its own statistics.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, int classes);
// Same generator, standardized with `stats` (validation splits).
Dataset synth_dataset(std::uint64_t seed, std::size_t n, int classes, const NormStats& stats);

struct Augment {
  bool hflip = true;
  bool pad_crop = true;
  std::size_t pad = 4;
};

// Gathers `index` into a batch, applying reflect-pad + random crop and
// horizontal flips drawn from `rng` when enabled.
TensorF make_batch(const Dataset& data, const std::vector<std::size_t>& index, const Augment& aug, Rng* rng);

}  // namespace lct
