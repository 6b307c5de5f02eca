#include "lct/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace lct {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const TensorF* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

namespace {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    out.insert(out.end(), p, p + sizeof(U));
  }
  void tensor(const std::string& name, const TensorF& t) {
    put(static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put(static_cast<std::uint64_t>(d));
    const auto* p = reinterpret_cast<const unsigned char*>(t.data());
    out.insert(out.end(), p, p + t.size() * sizeof(float));
  }
  std::vector<unsigned char> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b, std::size_t end) : bytes(b), end(end) {}

  void need(std::size_t n, const char* what) {
    if (pos + n > end) {
      throw CheckpointError("checkpoint truncated at byte offset " + std::to_string(pos) + " reading " + what);
    }
  }
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes.data() + pos, sizeof(U));
    pos += sizeof(U);
    return v;
  }
  std::pair<std::string, TensorF> tensor() {
    const auto len = get<std::uint32_t>("name length");
    need(len, "tensor name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    const auto rank = get<std::uint32_t>("rank");
    if (rank > 8) throw CheckpointError("checkpoint: tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = get<std::uint64_t>("dims");
      if (d == 0 || d > (std::uint64_t(1) << 40)) throw CheckpointError("checkpoint: bad extent in '" + name + "'");
      count *= d;
    }
    if (count > (end - pos) / sizeof(float)) {
      throw CheckpointError("checkpoint truncated at byte offset " + std::to_string(pos) + " reading payload of '" +
                            name + "'");
    }
    std::vector<float> data(count);
    std::memcpy(data.data(), bytes.data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
    return {std::move(name), TensorF(std::move(shape), std::move(data))};
  }

  const std::vector<unsigned char>& bytes;
  std::size_t end;
  std::size_t pos = 0;
};

std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.out.insert(w.out.end(), {'L', 'C', 'T', 'C'});
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) w.tensor(name, t);
  w.put(static_cast<std::uint64_t>(ckpt.optimizer.size()));
  for (const auto& [name, t] : ckpt.optimizer) {
    if (name.rfind(kMomentumPrefix, 0) != 0) throw CheckpointError("optimizer buffer '" + name + "' lacks prefix");
    w.tensor(name, t);
  }
  w.put(ckpt.rng.seed);
  w.put(ckpt.rng.counter);
  w.put(ckpt.epoch);
  w.put(crc_of(w.out.data(), w.out.size()));
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "LCTC", 4) != 0) throw CheckpointError("checkpoint: bad magic");
  if (bytes.size() < 8 + 4) throw CheckpointError("checkpoint truncated at byte offset " + std::to_string(bytes.size()));
  Reader r(bytes, bytes.size() - 4);
  r.pos = 4;
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  const auto n = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < n; ++i) c.tensors.push_back(r.tensor());
  const auto m = r.get<std::uint64_t>("optimizer count");
  for (std::uint64_t i = 0; i < m; ++i) {
    c.optimizer.push_back(r.tensor());
    if (c.optimizer.back().first.rfind(kMomentumPrefix, 0) != 0) {
      throw CheckpointError("checkpoint: optimizer buffer '" + c.optimizer.back().first + "' lacks prefix");
    }
  }
  c.rng.seed = r.get<std::uint64_t>("rng seed");
  c.rng.counter = r.get<std::uint64_t>("rng counter");
  c.epoch = r.get<std::uint64_t>("epoch");
  if (r.pos != r.end) throw CheckpointError("checkpoint: " + std::to_string(r.end - r.pos) + " trailing bytes");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + r.end, 4);
  if (stored != crc_of(bytes.data(), r.end)) throw CheckpointError("checkpoint: CRC32 mismatch");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint capture_model(const ParamRegistry<float>& registry) {
  Checkpoint c;
  for (const auto& p : registry.params()) c.tensors.emplace_back(p.name, TensorF(p.tensor->shape(), {p.tensor->values().begin(), p.tensor->values().end()}));
  for (const auto& b : registry.buffers()) c.tensors.emplace_back(b.name, TensorF(b.tensor->shape(), {b.tensor->values().begin(), b.tensor->values().end()}));
  return c;
}

void restore_model(const Checkpoint& ckpt, const ParamRegistry<float>& registry) {
  std::set<std::string> known;
  auto load = [&](const std::string& name, TensorF& dst) {
    known.insert(name);
    const TensorF* src = ckpt.find(name);
    if (!src) throw CheckpointMismatch(name, "checkpoint has no tensor '" + name + "'");
    if (src->shape() != dst.shape()) {
      throw CheckpointMismatch(name, "tensor '" + name + "' is " + to_string(src->shape()) + " in the checkpoint, " +
                                         to_string(dst.shape()) + " in the model");
    }
  };
  for (const auto& p : registry.params()) load(p.name, *p.tensor);
  for (const auto& b : registry.buffers()) load(b.name, *b.tensor);
  for (const auto& [name, t] : ckpt.tensors) {
    if (!known.count(name) && name.rfind("trainer/", 0) != 0) {
      throw CheckpointMismatch(name, "checkpoint tensor '" + name + "' has no place in the model");
    }
  }
  // Only copy once everything is known to fit.
  for (const auto& p : registry.params()) {
    const auto& src = *ckpt.find(p.name);
    std::copy(src.values().begin(), src.values().end(), p.tensor->values().begin());
  }
  for (const auto& b : registry.buffers()) {
    const auto& src = *ckpt.find(b.name);
    std::copy(src.values().begin(), src.values().end(), b.tensor->values().begin());
  }
}

}  // namespace lct
