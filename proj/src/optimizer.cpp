#include "fpott/optimizer.hpp"

#include <cmath>

#include "fpott/error.hpp"

namespace fpott {

void optimizer_step(OptimizerState& opt, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) {
    throw Error("ShapeMismatch", "gradient length differs from parameter length");
  }
  const std::size_t n = params.size();
  if (opt.first.empty()) opt.first.assign(n, 0.0);
  if (opt.first.size() != n) throw Error("ShapeMismatch", "optimizer state built for another model");
  ++opt.step;

  if (const auto* sgd = std::get_if<Sgd>(&opt.algorithm)) {
    for (std::size_t i = 0; i < n; ++i) {
      opt.first[i] = sgd->momentum * opt.first[i] + grads[i];
      params[i] -= sgd->lr * opt.first[i];
    }
    return;
  }

  const Adam& a = std::get<Adam>(opt.algorithm);
  if (opt.second.empty()) opt.second.assign(n, 0.0);
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(a.beta1, t);
  const double c2 = 1.0 - std::pow(a.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    opt.first[i] = a.beta1 * opt.first[i] + (1.0 - a.beta1) * g;
    opt.second[i] = a.beta2 * opt.second[i] + (1.0 - a.beta2) * g * g;
    const double m_hat = opt.first[i] / c1;
    const double v_hat = opt.second[i] / c2;
    params[i] -= a.lr * m_hat / (std::sqrt(v_hat) + a.eps);
  }
}

void optimizer_step(OptimizerState& opt, ParameterSet& params, const ParameterSet& grads) {
  if (!params.compatible_with(grads)) {
    throw Error("ShapeMismatch", "gradients belong to a different parameter layout");
  }
  optimizer_step(opt, params.values(), grads.values());
}

}  // namespace fpott
