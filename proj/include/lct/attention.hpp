#pragma once

#include <optional>
#include <string>

#include "lct/layers.hpp"

namespace lct {

enum class AttentionKind { none, se, lct, se_plus };
enum class InitMode { w0_b1, w0_b0, w1_b0 };

std::string to_string(AttentionKind kind);
std::string to_string(InitMode mode);
// Accepts "none", "se", "lct", "se_plus" and "se+". Throws ConfigError.
AttentionKind parse_attention_kind(const std::string& text);
InitMode parse_init_mode(const std::string& text);

struct AttentionConfig {
  AttentionKind kind = AttentionKind::none;
  std::size_t channels = 0;
  std::size_t reduction = 16;
  std::size_t groups = 64;
  double epsilon = 1e-5;
  InitMode init = InitMode::w0_b1;
  bool skip_normalize = false;
  bool skip_transform = false;

  // min(groups, channels).
  std::size_t effective_groups() const { return std::min(groups, channels); }
  bool normalizes() const {
    return (kind == AttentionKind::lct && !skip_normalize) || kind == AttentionKind::se_plus;
  }
  // Throws ConfigError, or GroupError when C is not divisible by G_eff.
  void validate() const;
};

// ---- operators. Shapes: X is N x C x H x W, z/zhat/a are N x C.

// Spatial mean per (sample, channel).
template <typename T>
Tensor<T> aggregate(const Tensor<T>& x);
template <typename T>
Tensor<T> aggregate_backward(const Tensor<T>& dz, const Shape& x_shape);

template <typename T>
struct Normalized {
  Tensor<T> out;              // N x C
  std::vector<double> rstd;   // N x G, 1/sqrt(var + eps)
  std::size_t groups = 0;
};

// Standardizes contiguous groups of C/groups channels per sample, biased
// variance, epsilon inside the square root.
template <typename T>
Normalized<T> normalize(const Tensor<T>& z, std::size_t groups, double epsilon);
template <typename T>
Tensor<T> normalize_backward(const Tensor<T>& dzhat, const Normalized<T>& fwd);

// a = w * zhat + b per channel.
template <typename T>
Tensor<T> transform(const Tensor<T>& zhat, const Tensor<T>& w, const Tensor<T>& b);
// Returns dzhat and accumulates into dw, db.
template <typename T>
Tensor<T> transform_backward(const Tensor<T>& da, const Tensor<T>& zhat, const Tensor<T>& w, std::span<T> dw,
                             std::span<T> db);

// Y = X * sigmoid(a), broadcast over the spatial axes.
template <typename T>
Tensor<T> fuse(const Tensor<T>& x, const Tensor<T>& a);
// Gate given directly (already squashed).
template <typename T>
Tensor<T> gate(const Tensor<T>& x, const Tensor<T>& g);

template <typename T>
struct FuseGrads {
  Tensor<T> dx, da;
};
template <typename T>
FuseGrads<T> fuse_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& a);

// SE excitation scores: W2 relu(W1 z + b1) + b2, before the sigmoid.
template <typename T>
struct SeParams {
  const Tensor<T>& w1;
  const Tensor<T>& b1;
  const Tensor<T>& w2;
  const Tensor<T>& b2;
};

template <typename T>
struct Excited {
  Tensor<T> scores;   // N x C
  Tensor<T> hidden;   // N x C/r, after the ReLU
};

template <typename T>
Excited<T> se_excite(const Tensor<T>& z, const SeParams<T>& p);

template <typename T>
struct SeGrads {
  Tensor<T> dz, dw1, db1, dw2, db2;
};
template <typename T>
SeGrads<T> se_excite_backward(const Tensor<T>& dscores, const Tensor<T>& z, const Excited<T>& fwd,
                              const SeParams<T>& p);

// Per-sample statistics captured at one attention point while recording.
template <typename T>
struct AttentionRecord {
  Tensor<T> ctx_before;   // aggregate(X)
  Tensor<T> attention;    // sigmoid(a), or 1 for kind none
  Tensor<T> ctx_after;    // aggregate(Y)
};

// One attention block on a residual branch. Kind none is the identity and
// still records (attention = 1) so plain networks can be instrumented.
template <typename T>
class AttentionBlock : public Layer<T> {
 public:
  AttentionBlock(const AttentionConfig& config, Rng& rng);

  std::string kind() const override { return "attention_" + lct::to_string(config_.kind); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect(ParamRegistry<T>& registry, const std::string& prefix) override;

  const AttentionConfig& config() const { return config_; }

  void set_recording(bool on) { recording_ = on; }
  const std::optional<AttentionRecord<T>>& record() const { return record_; }

  // Test hook: replaces the computed gate with a constant.
  void set_gate_override(std::optional<T> value) { gate_override_ = value; }

  // lct parameters.
  Tensor<T> w, b;
  // se / se_plus parameters.
  Tensor<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;

 private:
  AttentionConfig config_;
  bool recording_ = false;
  std::optional<T> gate_override_;
  std::optional<AttentionRecord<T>> record_;

  // Forward cache.
  bool cached_ = false;
  Tensor<T> x_, z_, a_;
  Normalized<T> norm_;
  std::optional<Excited<T>> excited_;
};

}  // namespace lct
