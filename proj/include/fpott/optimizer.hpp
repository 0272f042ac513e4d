#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "fpott/encoder.hpp"

namespace fpott {

struct Sgd {
  double lr = 0.01;
  double momentum = 0.0;
};

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerAlgorithm = std::variant<Sgd, Adam>;

// Moment buffers are created lazily on the first step and then must keep the
// same length. SGD uses `first` as its velocity buffer.
struct OptimizerState {
  OptimizerAlgorithm algorithm = Adam{};
  std::vector<double> first;
  std::vector<double> second;
  std::uint64_t step = 0;

  explicit OptimizerState(OptimizerAlgorithm alg = Adam{}) : algorithm(alg) {}
};

// In-place update of `params`. Throws "ShapeMismatch".
void optimizer_step(OptimizerState& opt, ParameterSet& params, const ParameterSet& grads);
void optimizer_step(OptimizerState& opt, std::span<double> params, std::span<const double> grads);

}  // namespace fpott
