#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lct/backbone.hpp"
#include "lct/checkpoint.hpp"
#include "lct/data.hpp"

namespace lct {

struct TrainConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  DecayPolicy decay = DecayPolicy::all;
  // (epoch, multiplier): from that many completed epochs on, lr = lr0 * multiplier.
  // Empty means steps of x0.1 at 60% and 90% of `epochs`.
  std::vector<std::pair<std::size_t, double>> schedule;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  Augment augment;

  // Throws ConfigError.
  void validate() const;
  std::vector<std::pair<std::size_t, double>> effective_schedule() const;
  // Learning rate for 0-based epoch `epoch`.
  double lr_at(std::size_t epoch) const;
};

struct EpochRow {
  std::size_t epoch = 0;   // 1-based
  double lr = 0;
  double train_loss = 0;
  double train_top1 = 0;
  double val_top1 = 0;
  double val_top5 = 0;
};

struct TrainLog {
  std::vector<EpochRow> rows;
  bool diverged = false;
  std::string reason;
};

// epoch,lr,train_loss,train_top1,val_top1,val_top5 with 9 significant digits.
std::string format_train_log(const TrainLog& log);

struct EvalResult {
  double top1 = 0, top5 = 0, loss = 0;
};

// True when `label` is among the k largest entries; ties go to the lower index.
bool in_top_k(const float* logits, std::size_t classes, int label, std::size_t k);

template <typename T>
EvalResult evaluate_logits(const Tensor<T>& logits, const std::vector<int>& labels);

// Inference-mode pass over the whole set in fixed batches.
EvalResult evaluate(Network<float>& net, const Dataset& data, std::size_t batch_size = 250);

// Single logical mutator of one network: owns the optimizer state and the
// shuffling/augmentation stream, so a checkpoint restores it exactly.
class Trainer {
 public:
  Trainer(Network<float>& net, TrainConfig config);

  // Runs epochs until `epochs_total` (default: config.epochs) or divergence.
  // `on_epoch` sees each finished row.
  TrainLog train(const Dataset& train, const Dataset* val, std::optional<std::size_t> epochs_total = std::nullopt,
                 const std::function<void(const EpochRow&)>& on_epoch = {});

  std::size_t epoch() const { return epoch_; }
  const TrainConfig& config() const { return config_; }

  Checkpoint snapshot();
  // Throws CheckpointMismatch on a model mismatch.
  void restore(const Checkpoint& ckpt);

 private:
  EpochRow run_epoch(const Dataset& train, const Dataset* val, bool& diverged, std::string& reason);

  Network<float>& net_;
  TrainConfig config_;
  ParamRegistry<float> registry_;
  Sgd<float> sgd_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::optional<double> initial_loss_;
};

}  // namespace lct
