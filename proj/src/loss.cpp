#include "lct/loss.hpp"

#include <cmath>
#include <string>

namespace lct {

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  LossResult<T> r;
  r.dlogits = Tensor<T>(logits.shape());
  double total = 0;
  std::vector<double> p(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= k) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(k) + ")");
    }
    const T* row = logits.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, double(row[j]));
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += p[j] = std::exp(double(row[j]) - mx);
    total += std::log(sum) - (double(row[labels[i]]) - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double g = p[j] / sum - (j == std::size_t(labels[i]) ? 1.0 : 0.0);
      r.dlogits[i * k + j] = T(g / double(n));
    }
  }
  r.loss = total / double(n);
  return r;
}

template LossResult<float> cross_entropy(const Tensor<float>&, const std::vector<int>&);
template LossResult<double> cross_entropy(const Tensor<double>&, const std::vector<int>&);

}  // namespace lct
