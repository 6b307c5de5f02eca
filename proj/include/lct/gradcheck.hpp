#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lct/backbone.hpp"

namespace lct {

// A differentiable function of named double tensors, probed with a fixed
// random projection: L = sum(r * forward()).
struct Probe {
  std::vector<std::pair<std::string, TensorD*>> inputs;
  std::function<TensorD()> forward;
  // Gradients of sum(dy * forward()) for each input, in order.
  std::function<std::vector<TensorD>(const TensorD& dy)> backward;
  // Scalar losses (end-to-end) skip the projection and use forward()[0].
  bool scalar_loss = false;
};

struct GradResult {
  std::string name;
  std::string scope;
  double max_rel_error = 0;
  std::string worst;   // "<input>[<index>] analytic=.. numeric=.."
  std::size_t checked = 0;
  bool pass = false;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-6;
  // Coordinates sampled per input tensor; smaller tensors are checked fully.
  std::size_t max_coords = 48;
  std::uint64_t seed = 7;
  // Replaces the layer a "layers" unit is built from, keyed by unit name.
  std::map<std::string, std::function<std::unique_ptr<Layer<double>>()>> layer_overrides;
};

// Central differences against probe.backward.
GradResult check_probe(const std::string& name, const std::string& scope, Probe& probe,
                       const GradcheckOptions& options, Rng& rng);

// "layers", "blocks", "end2end" or "all". Throws ConfigError otherwise.
std::vector<std::string> gradcheck_units(const std::string& scope);
std::vector<GradResult> run_gradcheck(const std::string& scope, const GradcheckOptions& options = {});

}  // namespace lct
