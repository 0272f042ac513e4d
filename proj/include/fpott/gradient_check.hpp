#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpott/encoder.hpp"

namespace fpott {

struct GradientCheckOptions {
  double h = 1e-5;
  std::size_t min_coordinates = 200;
  std::uint64_t seed = 0;
  // Test hook: scale the analytic gradient of one named tensor before
  // comparing, to confirm the check can fail.
  std::string corrupt_tensor;
  double corrupt_factor = 1.0;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// gradient is zero from dividing rounding noise by rounding noise.
inline constexpr double kRelativeErrorFloor = 1e-6;
double relative_error(double analytic, double numeric);

// Central differences of `loss_at` (evaluated with the full vector perturbed in
// place) against `analytic` over the listed coordinates.
double max_relative_error(const std::function<double(std::span<const double>)>& loss_at,
                          std::vector<double> point, std::span<const double> analytic,
                          std::span<const std::size_t> coords, double h);

// Stratified sample: every tensor of the layout contributes coordinates, at
// least `min_total` overall.
std::vector<std::size_t> sample_coordinates(const ParameterLayout& layout, std::size_t min_total,
                                            std::uint64_t seed);

// Full encoder + loss check. Requires d_model <= 16 and n_layers <= 2.
GradientCheckResult gradient_check(const EncoderConfig& cfg, const ParameterSet& params,
                                   const Tensor& input, const LossTarget& target,
                                   const GradientCheckOptions& options = {});

}  // namespace fpott
