#include "lct/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "lct/loss.hpp"

namespace lct {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size: must be at least 1");
  if (epochs < 1) throw ConfigError("train.epochs: must be at least 1");
  if (!(lr0 >= 0)) throw ConfigError("train.lr0: must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum: must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay: must be non-negative");
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    if (schedule[i].first <= schedule[i - 1].first) {
      throw ConfigError("train.schedule: epochs must be strictly increasing");
    }
  }
  for (const auto& [e, m] : schedule)
    if (!(m >= 0)) throw ConfigError("train.schedule: multipliers must be non-negative");
}

std::vector<std::pair<std::size_t, double>> TrainConfig::effective_schedule() const {
  if (!schedule.empty()) return schedule;
  const std::size_t a = (epochs * 6 + 5) / 10, b = (epochs * 9 + 5) / 10;
  std::vector<std::pair<std::size_t, double>> s;
  if (a > 0 && a < epochs) s.emplace_back(a, 0.1);
  if (b > a && b < epochs) s.emplace_back(b, 0.01);
  return s;
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double mult = 1;
  for (const auto& [e, m] : effective_schedule())
    if (epoch >= e) mult = m;
  return lr0 * mult;
}

std::string format_train_log(const TrainLog& log) {
  std::string out = "epoch,lr,train_loss,train_top1,val_top1,val_top5\n";
  char line[256];
  for (const auto& r : log.rows) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.lr, r.train_loss, r.train_top1,
                  r.val_top1, r.val_top5);
    out += line;
  }
  return out;
}

bool in_top_k(const float* logits, std::size_t classes, int label, std::size_t k) {
  const float t = logits[label];
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < classes; ++j) {
    if (logits[j] > t || (logits[j] == t && j < std::size_t(label))) ++ahead;
  }
  return ahead < k;
}

template <typename T>
EvalResult evaluate_logits(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const Tensor<float> f = logits.template cast<float>();
  EvalResult r;
  for (std::size_t i = 0; i < n; ++i) {
    r.top1 += in_top_k(f.data() + i * k, k, labels[i], 1);
    r.top5 += in_top_k(f.data() + i * k, k, labels[i], 5);
  }
  r.top1 /= double(n);
  r.top5 /= double(n);
  r.loss = cross_entropy(logits, labels).loss;
  return r;
}

template EvalResult evaluate_logits(const Tensor<float>&, const std::vector<int>&);
template EvalResult evaluate_logits(const Tensor<double>&, const std::vector<int>&);

EvalResult evaluate(Network<float>& net, const Dataset& data, std::size_t batch_size) {
  EvalResult total;
  const std::size_t n = data.size();
  for (std::size_t s = 0; s < n; s += batch_size) {
    const std::size_t e = std::min(n, s + batch_size);
    std::vector<std::size_t> idx(e - s);
    std::iota(idx.begin(), idx.end(), s);
    const TensorF logits = net.forward(make_batch(data, idx, {}, nullptr), Mode::infer);
    const std::vector<int> labels(data.labels.begin() + long(s), data.labels.begin() + long(e));
    const EvalResult r = evaluate_logits(logits, labels);
    const double w = double(e - s);
    total.top1 += r.top1 * w;
    total.top5 += r.top5 * w;
    total.loss += r.loss * w;
  }
  total.top1 /= double(n);
  total.top5 /= double(n);
  total.loss /= double(n);
  return total;
}

Trainer::Trainer(Network<float>& net, TrainConfig config)
    : net_(net),
      config_(std::move(config)),
      registry_(net.registry(config_.decay)),
      sgd_(config_.momentum, config_.weight_decay),
      rng_(Rng(config_.seed).fork(1)) {
  config_.validate();
}

EpochRow Trainer::run_epoch(const Dataset& train, const Dataset* val, bool& diverged, std::string& reason) {
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);

  EpochRow row;
  row.epoch = epoch_ + 1;
  row.lr = config_.lr_at(epoch_);
  double loss_sum = 0, correct = 0;
  for (std::size_t s = 0; s < n; s += config_.batch_size) {
    const std::size_t e = std::min(n, s + config_.batch_size);
    const std::vector<std::size_t> idx(order.begin() + long(s), order.begin() + long(e));
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
    const TensorF x = make_batch(train, idx, config_.augment, &rng_);
    const TensorF logits = net_.forward(x, Mode::train);
    const auto ce = cross_entropy(logits, labels);
    if (!std::isfinite(ce.loss)) {
      diverged = true;
      reason = "non-finite loss at epoch " + std::to_string(row.epoch);
      row.train_loss = std::numeric_limits<double>::quiet_NaN();
      return row;
    }
    // Kept at checkpoint precision so a resumed run uses the same threshold.
    if (!initial_loss_) initial_loss_ = double(float(ce.loss));
    for (std::size_t i = 0; i < idx.size(); ++i) correct += in_top_k(logits.data() + i * logits.dim(1), logits.dim(1), labels[i], 1);
    loss_sum += ce.loss * double(idx.size());
    net_.backward(ce.dlogits);
    sgd_.step(registry_, row.lr);
  }
  row.train_loss = loss_sum / double(n);
  row.train_top1 = correct / double(n);
  if (row.train_loss > 10 * *initial_loss_) {
    diverged = true;
    reason = "epoch " + std::to_string(row.epoch) + " loss " + std::to_string(row.train_loss) +
             " exceeds 10x the initial " + std::to_string(*initial_loss_);
  }
  if (val) {
    const auto r = evaluate(net_, *val);
    row.val_top1 = r.top1;
    row.val_top5 = r.top5;
  } else {
    row.val_top1 = row.val_top5 = std::numeric_limits<double>::quiet_NaN();
  }
  ++epoch_;
  return row;
}

TrainLog Trainer::train(const Dataset& train, const Dataset* val, std::optional<std::size_t> epochs_total,
                        const std::function<void(const EpochRow&)>& on_epoch) {
  if (train.size() == 0) throw DataError("training set is empty");
  if (int(net_.spec().num_classes) != train.classes) {
    throw ConfigError("dataset has " + std::to_string(train.classes) + " classes, network " +
                      std::to_string(net_.spec().num_classes));
  }
  TrainLog log;
  const std::size_t until = epochs_total.value_or(config_.epochs);
  while (epoch_ < until) {
    bool diverged = false;
    auto row = run_epoch(train, val, diverged, log.reason);
    log.rows.push_back(row);
    if (on_epoch) on_epoch(row);
    if (diverged) {
      log.diverged = true;
      break;
    }
  }
  return log;
}

Checkpoint Trainer::snapshot() {
  Checkpoint c = capture_model(registry_);
  if (initial_loss_) c.tensors.emplace_back("trainer/initial_loss", TensorF(Shape{1}, float(*initial_loss_)));
  for (const auto& [name, v] : sgd_.velocity()) {
    c.optimizer.emplace_back(kMomentumPrefix + name, TensorF(v.shape(), {v.values().begin(), v.values().end()}));
  }
  c.rng = rng_.state();
  c.epoch = epoch_;
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  restore_model(ckpt, registry_);
  auto& vel = sgd_.velocity();
  vel.clear();
  const std::string prefix = kMomentumPrefix;
  for (const auto& [name, t] : ckpt.optimizer) {
    const std::string param = name.substr(prefix.size());
    const Tensor<float>* p = registry_.find(param);
    if (!p || p->shape() != t.shape()) throw CheckpointMismatch(name, "optimizer buffer '" + name + "' does not fit");
    vel.emplace(param, t);
  }
  initial_loss_.reset();
  if (const TensorF* il = ckpt.find("trainer/initial_loss")) initial_loss_ = (*il)[0];
  rng_ = Rng(ckpt.rng);
  epoch_ = ckpt.epoch;
}

}  // namespace lct
