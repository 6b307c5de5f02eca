#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lct/ops.hpp"
#include "lct/rng.hpp"

namespace lct {

enum class Mode { train, infer };

// Which parameters weight decay touches. `all` is the default.
enum class DecayPolicy { all, weights_only };

enum class ParamRole { weight, affine };

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor = nullptr;
  bool decay = true;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

// Ordered (insertion order) registry of trainable tensors plus the non-trainable
// buffers that checkpoints must carry (BatchNorm running statistics).
template <typename T>
class ParamRegistry {
 public:
  explicit ParamRegistry(DecayPolicy policy = DecayPolicy::all) : policy_(policy) {}

  // Throws ConfigError on a duplicate name.
  void add(const std::string& name, Tensor<T>& tensor, ParamRole role);
  void add_buffer(const std::string& name, Tensor<T>& tensor);

  const std::vector<NamedParam<T>>& params() const { return params_; }
  const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }
  Tensor<T>* find(const std::string& name) const;
  std::size_t total_params() const;

 private:
  void claim(const std::string& name);

  DecayPolicy policy_;
  std::vector<NamedParam<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
  std::map<std::string, bool> names_;
};

// A differentiable stage. forward caches what backward needs; backward
// returns dL/dX and adds parameter gradients into each parameter's grad.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect(ParamRegistry<T>& registry, const std::string& prefix) {
    (void)registry;
    (void)prefix;
  }
};

template <typename T>
class Conv2d : public Layer<T> {
 public:
  // He-normal init, std sqrt(2 / (k*k*in)); no bias. Padding is k/2.
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);

  std::string kind() const override { return "conv2d"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect(ParamRegistry<T>& registry, const std::string& prefix) override;

  Tensor<T> weight;
  std::size_t stride, pad;

 private:
  detail::PhasedInput<T> input_;
  detail::ConvScratch<T> scratch_;
  bool cached_ = false;
};

template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double epsilon = 1e-5);

  std::string kind() const override { return "batchnorm2d"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect(ParamRegistry<T>& registry, const std::string& prefix) override;

  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  double momentum, epsilon;

 private:
  Tensor<T> xhat_;
  std::vector<double> rstd_;
  Mode mode_ = Mode::train;
  bool cached_ = false;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  Tensor<T> x_;
  bool cached_ = false;
};

template <typename T>
class Sigmoid : public Layer<T> {
 public:
  std::string kind() const override { return "sigmoid"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 protected:
  Tensor<T> y_;
  bool cached_ = false;
};

// y = x W^T + b for x of shape N x in.
template <typename T>
class Linear : public Layer<T> {
 public:
  // Weights uniform in +-1/sqrt(in), bias zero.
  Linear(std::size_t in, std::size_t out, Rng& rng);

  std::string kind() const override { return "linear"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect(ParamRegistry<T>& registry, const std::string& prefix) override;

  Tensor<T> weight, bias;

 private:
  Tensor<T> x_;
  bool cached_ = false;
};

// N x C x H x W -> N x C.
template <typename T>
class GlobalAvgPool : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  Shape x_shape_;
};

// Unpadded average pooling with a square window.
template <typename T>
class AvgPool2d : public Layer<T> {
 public:
  AvgPool2d(std::size_t kernel, std::size_t stride) : kernel(kernel), stride(stride) {}

  std::string kind() const override { return "avg_pool2d"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

  std::size_t kernel, stride;

 private:
  Shape x_shape_;
};

// SGD with momentum: v = m*v + g (+ wd*p if eligible); p -= lr*v; grads cleared.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum(momentum), weight_decay(weight_decay) {}

  // Throws StateError naming the first parameter without a gradient.
  void step(const ParamRegistry<T>& registry, double lr);

  // Velocity buffers keyed by parameter name (absent until the first step).
  std::map<std::string, Tensor<T>>& velocity() { return velocity_; }
  const std::map<std::string, Tensor<T>>& velocity() const { return velocity_; }

  double momentum, weight_decay;

 private:
  std::map<std::string, Tensor<T>> velocity_;
};

}  // namespace lct
