#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lct/layers.hpp"

namespace lct {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kMomentumPrefix = "momentum/";

// Little-endian file:
//   "LCTC" | version u32 | count u64 | tensors | count u64 | momentum/ tensors |
//   rng seed u64 | rng counter u64 | epoch u64 | crc32 u32 (of everything before it)
// tensor: name_len u32 | name | rank u32 | dims u64[rank] | float32 payload
struct Checkpoint {
  std::vector<std::pair<std::string, TensorF>> tensors;
  std::vector<std::pair<std::string, TensorF>> optimizer;  // names carry kMomentumPrefix
  Rng::State rng;
  std::uint64_t epoch = 0;

  const TensorF* find(const std::string& name) const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
// Throws CheckpointError on bad magic, unsupported version, truncation (with
// the byte offset) or a CRC mismatch.
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Model tensors (parameters then buffers) in registry order.
Checkpoint capture_model(const ParamRegistry<float>& registry);
// Copies every registry tensor from `ckpt`. Throws CheckpointMismatch naming
// the first tensor that is missing or has another shape.
void restore_model(const Checkpoint& ckpt, const ParamRegistry<float>& registry);

}  // namespace lct
