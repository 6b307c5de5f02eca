#pragma once

#include "lct/layers.hpp"

namespace faults {

// Sigmoid whose backward drops the (1 - y) factor.
class BrokenSigmoid : public lct::Sigmoid<double> {
 public:
  lct::TensorD backward(const lct::TensorD& dy) override {
    lct::TensorD dx = lct::Sigmoid<double>::backward(dy);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * y_[i];
    return dx;
  }
};

}  // namespace faults
