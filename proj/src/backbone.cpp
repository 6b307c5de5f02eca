#include "lct/backbone.hpp"

#include <set>

#include "lct/log.hpp"

namespace lct {

std::string to_string(BlockKind kind) { return kind == BlockKind::basic ? "basic" : "bottleneck"; }

BlockKind parse_block_kind(const std::string& text) {
  if (text == "basic") return BlockKind::basic;
  if (text == "bottleneck") return BlockKind::bottleneck;
  throw ConfigError("unknown block kind '" + text + "' (expected basic, bottleneck)");
}

AttentionConfig NetworkSpec::attention_for(std::size_t channels) const {
  AttentionConfig c = attention;
  c.channels = channels;
  return c;
}

void NetworkSpec::validate() const {
  auto fail = [](const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); };
  if (input.channels == 0 || input.height == 0 || input.width == 0) fail("net.input", "extents must be positive");
  if (stem.channels == 0) fail("net.stem.channels", "must be positive");
  if (stem.kernel == 0 || stem.kernel % 2 == 0) fail("net.stem.kernel", "must be odd");
  if (stem.stride == 0) fail("net.stem.stride", "must be positive");
  if (stem.pool_kernel && stem.pool_stride == 0) fail("net.stem.pool_stride", "must be positive");
  if (stages.empty()) fail("net.stages", "at least one stage is required");
  if (num_classes == 0) fail("net.classes", "must be positive");
  std::size_t h = (input.height + 2 * (stem.kernel / 2) - stem.kernel) / stem.stride + 1;
  std::size_t w = (input.width + 2 * (stem.kernel / 2) - stem.kernel) / stem.stride + 1;
  if (stem.pool_kernel) {
    if (h < stem.pool_kernel || w < stem.pool_kernel) fail("net.stem.pool_kernel", "window larger than feature map");
    h = (h - stem.pool_kernel) / stem.pool_stride + 1;
    w = (w - stem.pool_kernel) / stem.pool_stride + 1;
  }
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::string path = "net.stage" + std::to_string(s + 1);
    if (st.blocks == 0) fail(path + ".blocks", "must be positive");
    if (st.out_channels == 0) fail(path + ".channels", "must be positive");
    if (st.stride != 1 && st.stride != 2) fail(path + ".stride", "must be 1 or 2");
    if (st.kind == BlockKind::bottleneck && st.out_channels % kBottleneckExpansion != 0) {
      fail(path + ".channels", "bottleneck width must be divisible by 4");
    }
    h = (h - 1) / st.stride + 1;
    w = (w - 1) / st.stride + 1;
    try {
      attention_for(st.out_channels).validate();
    } catch (const GroupError& e) {
      throw GroupError(path + ".attention: " + e.what());
    } catch (const ConfigError& e) {
      fail(path + ".attention", e.what());
    }
  }
}

NetworkSpec resnet_mini_spec() {
  NetworkSpec s;
  s.stem = {16, 3, 1, 0, 0};
  s.stages = {{3, 16, BlockKind::basic, 1}, {3, 32, BlockKind::basic, 2}, {3, 64, BlockKind::basic, 2}};
  s.num_classes = 10;
  s.input = {3, 32, 32};
  return s;
}

namespace {

NetworkSpec bottleneck_resnet(std::size_t b1, std::size_t b2, std::size_t b3, std::size_t b4) {
  NetworkSpec s;
  // The 3x3/2 max pool is modelled as a 2x2/2 average pool: same output size,
  // no parameters.
  s.stem = {64, 7, 2, 2, 2};
  s.stages = {{b1, 256, BlockKind::bottleneck, 1},
              {b2, 512, BlockKind::bottleneck, 2},
              {b3, 1024, BlockKind::bottleneck, 2},
              {b4, 2048, BlockKind::bottleneck, 2}};
  s.num_classes = 1000;
  s.input = {3, 224, 224};
  return s;
}

}  // namespace

NetworkSpec resnet50_spec() { return bottleneck_resnet(3, 4, 6, 3); }
NetworkSpec resnet101_spec() { return bottleneck_resnet(3, 4, 23, 3); }

NetworkSpec preset_spec(const std::string& name) {
  if (name == "resnet-mini" || name == "resnet_mini") return resnet_mini_spec();
  if (name == "resnet50") return resnet50_spec();
  if (name == "resnet101") return resnet101_spec();
  throw ConfigError("unknown preset '" + name + "' (expected resnet-mini, resnet50, resnet101)");
}

// ---- residual block

template <typename T>
ResidualBlock<T>::ResidualBlock(BlockKind kind, std::size_t in, std::size_t out, std::size_t stride,
                                const AttentionConfig& attn, Rng& rng)
    : kind_(kind) {
  auto add = [this](std::string name, Layer<T>* layer) { branch_.emplace_back(std::move(name), layer); };
  if (kind == BlockKind::basic) {
    add("conv1", new Conv2d<T>(in, out, 3, stride, rng));
    add("bn1", new BatchNorm2d<T>(out));
    add("relu1", new ReLU<T>());
    add("conv2", new Conv2d<T>(out, out, 3, 1, rng));
    add("bn2", new BatchNorm2d<T>(out));
  } else {
    const std::size_t mid = out / kBottleneckExpansion;
    add("conv1", new Conv2d<T>(in, mid, 1, 1, rng));
    add("bn1", new BatchNorm2d<T>(mid));
    add("relu1", new ReLU<T>());
    add("conv2", new Conv2d<T>(mid, mid, 3, stride, rng));
    add("bn2", new BatchNorm2d<T>(mid));
    add("relu2", new ReLU<T>());
    add("conv3", new Conv2d<T>(mid, out, 1, 1, rng));
    add("bn3", new BatchNorm2d<T>(out));
  }
  attn_ = std::make_unique<AttentionBlock<T>>(attn, rng);
  if (stride != 1 || in != out) {
    short_conv_ = std::make_unique<Conv2d<T>>(in, out, 1, stride, rng);
    short_bn_ = std::make_unique<BatchNorm2d<T>>(out);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  for (auto& [name, layer] : branch_) h = layer->forward(h, mode);
  h = attn_->forward(h, mode);
  if (short_conv_) {
    const Tensor<T> s = short_bn_->forward(short_conv_->forward(x, mode), mode);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += s[i];
  } else {
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
  }
  return out_relu_.forward(h, mode);
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& dy) {
  const Tensor<T> d = out_relu_.backward(dy);
  Tensor<T> dx = attn_->backward(d);
  for (auto it = branch_.rbegin(); it != branch_.rend(); ++it) dx = it->second->backward(dx);
  if (short_conv_) {
    const Tensor<T> ds = short_conv_->backward(short_bn_->backward(d));
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d[i];
  }
  return dx;
}

template <typename T>
void ResidualBlock<T>::collect(ParamRegistry<T>& registry, const std::string& prefix) {
  for (auto& [name, layer] : branch_) layer->collect(registry, prefix + name + ".");
  attn_->collect(registry, prefix + "attn.");
  if (short_conv_) {
    short_conv_->collect(registry, prefix + "shortcut.conv.");
    short_bn_->collect(registry, prefix + "shortcut.bn.");
  }
}

// ---- network

template <typename T>
Network<T>::Network(const NetworkSpec& spec, Rng& rng)
    : spec_((spec.validate(), spec)),
      stem_conv_(spec.input.channels, spec.stem.channels, spec.stem.kernel, spec.stem.stride, rng),
      stem_bn_(spec.stem.channels) {
  if (spec.stem.pool_kernel) stem_pool_ = std::make_unique<AvgPool2d<T>>(spec.stem.pool_kernel, spec.stem.pool_stride);
  std::set<std::size_t> warned;
  std::size_t in = spec.stem.channels;
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const auto& st = spec.stages[s];
    const AttentionConfig attn = spec.attention_for(st.out_channels);
    if ((attn.kind == AttentionKind::lct || attn.kind == AttentionKind::se_plus) && attn.groups > st.out_channels &&
        warned.insert(st.out_channels).second) {
      log::warn("attention groups " + std::to_string(attn.groups) + " exceed " + std::to_string(st.out_channels) +
                " channels in stage " + std::to_string(s + 1) + "; clamping G_eff to " +
                std::to_string(attn.effective_groups()));
    }
    auto& blocks = stages_.emplace_back();
    for (std::size_t b = 0; b < st.blocks; ++b) {
      blocks.push_back(
          std::make_unique<ResidualBlock<T>>(st.kind, in, st.out_channels, b == 0 ? st.stride : 1, attn, rng));
      in = st.out_channels;
      points_.push_back({s + 1, b + 1, &blocks.back()->attention()});
    }
  }
  fc_ = std::make_unique<Linear<T>>(in, spec.num_classes, rng);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, Mode mode) {
  const auto& in = spec_.input;
  if (x.rank() != 4 || x.dim(1) != in.channels || x.dim(2) != in.height || x.dim(3) != in.width) {
    throw ShapeError("network: expected N x " + std::to_string(in.channels) + " x " + std::to_string(in.height) +
                     " x " + std::to_string(in.width) + " input, got " + to_string(x.shape()));
  }
  Tensor<T> h = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x, mode), mode), mode);
  if (stem_pool_) h = stem_pool_->forward(h, mode);
  for (auto& stage : stages_)
    for (auto& block : stage) h = block->forward(h, mode);
  return fc_->forward(gap_.forward(h, mode), mode);
}

template <typename T>
Tensor<T> Network<T>::backward(const Tensor<T>& dlogits) {
  Tensor<T> d = gap_.backward(fc_->backward(dlogits));
  for (auto s = stages_.rbegin(); s != stages_.rend(); ++s)
    for (auto b = s->rbegin(); b != s->rend(); ++b) d = (*b)->backward(d);
  if (stem_pool_) d = stem_pool_->backward(d);
  return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(d)));
}

template <typename T>
ParamRegistry<T> Network<T>::registry(DecayPolicy policy) {
  ParamRegistry<T> r(policy);
  stem_conv_.collect(r, "stem.conv.");
  stem_bn_.collect(r, "stem.bn.");
  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b]->collect(r, "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1) + ".");
  fc_->collect(r, "fc.");
  return r;
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Network<float>;
template class Network<double>;

}  // namespace lct
