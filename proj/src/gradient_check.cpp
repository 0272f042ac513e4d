#include "fpott/gradient_check.hpp"

#include <algorithm>
#include <cmath>

#include "fpott/error.hpp"
#include "fpott/rng.hpp"

namespace fpott {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

double max_relative_error(const std::function<double(std::span<const double>)>& loss_at,
                          std::vector<double> point, std::span<const double> analytic,
                          std::span<const std::size_t> coords, double h) {
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double orig = point[i];
    point[i] = orig + h;
    const double up = loss_at(point);
    point[i] = orig - h;
    const double down = loss_at(point);
    point[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

std::vector<std::size_t> sample_coordinates(const ParameterLayout& layout, std::size_t min_total,
                                            std::uint64_t seed) {
  const auto entries = layout.entries();
  const std::size_t quota = std::max<std::size_t>(4, (min_total + entries.size() - 1) / entries.size());
  Rng rng(seed);
  std::vector<std::size_t> coords;
  for (const auto& e : entries) {
    if (e.size <= quota) {
      for (std::size_t j = 0; j < e.size; ++j) coords.push_back(e.offset + j);
      continue;
    }
    std::vector<std::size_t> idx(e.size);
    for (std::size_t j = 0; j < e.size; ++j) idx[j] = j;
    rng.shuffle(idx);
    for (std::size_t j = 0; j < quota; ++j) coords.push_back(e.offset + idx[j]);
  }
  // Small tensors may be exhausted before the quota; top up from everything.
  if (coords.size() < min_total && coords.size() < layout.total_size()) {
    std::vector<bool> used(layout.total_size(), false);
    for (auto c : coords) used[c] = true;
    std::vector<std::size_t> rest;
    for (std::size_t j = 0; j < layout.total_size(); ++j) {
      if (!used[j]) rest.push_back(j);
    }
    rng.shuffle(rest);
    for (std::size_t j = 0; j < rest.size() && coords.size() < min_total; ++j) {
      coords.push_back(rest[j]);
    }
  }
  std::sort(coords.begin(), coords.end());
  return coords;
}

GradientCheckResult gradient_check(const EncoderConfig& cfg, const ParameterSet& params,
                                   const Tensor& input, const LossTarget& target,
                                   const GradientCheckOptions& options) {
  if (cfg.d_model > 16 || cfg.n_layers > 2) {
    throw Error("BadConfig", "gradient check is meant for d_model <= 16 and n_layers <= 2");
  }
  auto fwd = encoder_forward(cfg, params, input);
  const auto lv = loss(cfg.head, fwd.output.values(), target);
  ParameterSet grads = encoder_backward(fwd.cache, params, lv.grad);

  if (!options.corrupt_tensor.empty()) {
    for (auto& g : grads.tensor(options.corrupt_tensor)) g *= options.corrupt_factor;
  }

  const auto layout = params.layout_ptr();
  auto loss_at = [&](std::span<const double> v) {
    const auto p = ParameterSet::unflatten(layout, std::vector<double>(v.begin(), v.end()));
    const auto out = encoder_forward(cfg, p, input).output;
    return loss(cfg.head, out.values(), target).value;
  };

  const auto coords = sample_coordinates(*layout, options.min_coordinates, options.seed);
  GradientCheckResult res;
  res.coordinates = coords.size();
  for (const auto& e : layout->entries()) {
    std::vector<std::size_t> mine;
    for (auto c : coords) {
      if (c >= e.offset && c < e.offset + e.size) mine.push_back(c);
    }
    const double err = max_relative_error(loss_at, params.flatten(), grads.values(), mine, options.h);
    if (err > res.max_relative_error || res.worst_tensor.empty()) {
      if (err >= res.max_relative_error) {
        res.max_relative_error = err;
        res.worst_tensor = e.name;
      }
    }
  }
  return res;
}

}  // namespace fpott
