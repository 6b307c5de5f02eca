#pragma once

#include <vector>

#include "lct/tensor.hpp"

namespace lct {

template <typename T>
struct LossResult {
  double loss = 0;       // mean over the batch
  Tensor<T> dlogits;     // d loss / d logits
};

// Softmax cross-entropy, mean-reduced. Throws DataError on an out-of-range label.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

}  // namespace lct
