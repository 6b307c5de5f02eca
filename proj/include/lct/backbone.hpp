#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lct/attention.hpp"

namespace lct {

enum class BlockKind { basic, bottleneck };

std::string to_string(BlockKind kind);
BlockKind parse_block_kind(const std::string& text);

struct StemSpec {
  std::size_t channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  // Average pool after the stem; kernel 0 disables it.
  std::size_t pool_kernel = 0;
  std::size_t pool_stride = 0;
};

struct StageSpec {
  std::size_t blocks = 1;
  // Block output width. Bottleneck blocks run at out_channels / 4 inside.
  std::size_t out_channels = 16;
  BlockKind kind = BlockKind::basic;
  std::size_t stride = 1;
};

struct InputSpec {
  std::size_t channels = 3, height = 32, width = 32;
};

struct NetworkSpec {
  StemSpec stem;
  std::vector<StageSpec> stages;
  // Template for every residual block; `channels` is filled per block.
  AttentionConfig attention;
  std::size_t num_classes = 10;
  InputSpec input;

  // Throws ConfigError (or GroupError) naming the offending field path.
  void validate() const;
  // Attention settings for a block with `channels` outputs.
  AttentionConfig attention_for(std::size_t channels) const;
};

inline constexpr std::size_t kBottleneckExpansion = 4;

NetworkSpec resnet_mini_spec();
NetworkSpec resnet50_spec();
NetworkSpec resnet101_spec();
// "resnet-mini", "resnet50", "resnet101". Throws ConfigError.
NetworkSpec preset_spec(const std::string& name);

template <typename T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(BlockKind kind, std::size_t in, std::size_t out, std::size_t stride, const AttentionConfig& attn,
                Rng& rng);

  std::string kind() const override { return kind_ == BlockKind::basic ? "basic_block" : "bottleneck_block"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect(ParamRegistry<T>& registry, const std::string& prefix) override;

  AttentionBlock<T>& attention() { return *attn_; }

 private:
  BlockKind kind_;
  // Residual branch in order, each with its registry name.
  std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> branch_;
  std::unique_ptr<AttentionBlock<T>> attn_;
  std::unique_ptr<Conv2d<T>> short_conv_;
  std::unique_ptr<BatchNorm2d<T>> short_bn_;
  ReLU<T> out_relu_;
};

template <typename T>
struct AttentionPoint {
  std::size_t stage = 0, block = 0;  // 1-based
  AttentionBlock<T>* block_ptr = nullptr;
};

template <typename T>
class Network {
 public:
  Network(const NetworkSpec& spec, Rng& rng);

  // x: N x C x H x W matching spec.input. Returns N x num_classes logits.
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dlogits);

  ParamRegistry<T> registry(DecayPolicy policy = DecayPolicy::all);
  const std::vector<AttentionPoint<T>>& attention_points() const { return points_; }
  const NetworkSpec& spec() const { return spec_; }

 private:
  NetworkSpec spec_;
  Conv2d<T> stem_conv_;
  BatchNorm2d<T> stem_bn_;
  ReLU<T> stem_relu_;
  std::unique_ptr<AvgPool2d<T>> stem_pool_;
  std::vector<std::vector<std::unique_ptr<ResidualBlock<T>>>> stages_;
  GlobalAvgPool<T> gap_;
  std::unique_ptr<Linear<T>> fc_;
  std::vector<AttentionPoint<T>> points_;
};

}  // namespace lct
