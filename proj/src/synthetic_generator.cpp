#include "fpott/synthetic_generator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fpott/error.hpp"
#include "fpott/optimizer.hpp"
#include "fpott/rng.hpp"

namespace fpott {

namespace {

constexpr double kLaneWidth = 12.0;
constexpr double kDefaultLength = 15.0;

// Feature and target scales.
constexpr double kFeatX = 4.0, kFeatY = 20.0, kFeatV = 50.0, kFeatA = 5.0, kFeatLane = 5.0,
                 kFeatOffset = 6.0;
constexpr double kTgtX = 0.5, kTgtY = 5.0, kTgtV = 0.5, kTgtA = 1.0;

EncoderConfig generator_config(std::size_t k, const GeneratorDims& dims, std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.d_model = dims.d_model;
  cfg.n_heads = dims.n_heads;
  cfg.n_layers = dims.n_layers;
  cfg.d_ff = dims.d_ff;
  cfg.k_context = k;
  cfg.input = LinearProjection{kGeneratorFeatures};
  cfg.head = Regressor{kGeneratorTargets};
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

double snap(double value, double grid) { return std::round(value / grid) * grid; }

double lane_center(int lane) { return kLaneWidth * (lane - 0.5); }

}  // namespace

void GenerationConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error("BadConfig", what); };
  if (T < 1) bad("T must be >= 1");
  if (k < 1) bad("k must be >= 1");
  if (T <= k) bad("T must exceed k");
  if (!(v_max > 0.0)) bad("v_max must be positive");
  if (!(a_max > 0.0)) bad("a_max must be positive");
  if (lane_count < 1) bad("lane_count must be >= 1");
  if (!(min_gap >= 0.0)) bad("min_gap must be >= 0");
  if (smoothing_window < 1 || smoothing_window % 2 == 0) bad("smoothing_window must be odd");
  if (!(init_span > 0.0)) bad("init_span must be positive");
}

InitialConditions sample_initial_conditions(const Dataset* reference, std::size_t m,
                                            const GenerationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (m == 0) throw Error("BadArgument", "m must be >= 1");
  Rng rng(seed);
  const auto lanes = static_cast<std::size_t>(cfg.lane_count);

  // Per-lane pools of reference states; empty pools mean "no reference".
  std::vector<std::vector<const VehicleState*>> pools(lanes);
  double max_length = kDefaultLength;
  double y_base = 0.0;
  bool have_reference = false;
  if (reference) {
    double y_min = INFINITY;
    for (const auto& t : reference->trajectories) {
      for (const auto& s : t.states) {
        const int lane = std::clamp(s.lane_id, 1, cfg.lane_count);
        pools[static_cast<std::size_t>(lane - 1)].push_back(&s);
        max_length = std::max(max_length, s.vehicle_length);
        y_min = std::min(y_min, s.local_y);
        have_reference = true;
      }
    }
    if (have_reference) y_base = snap(y_min, 1e-4);
  }

  const auto per_lane = static_cast<std::size_t>(
      std::floor((cfg.init_span + cfg.min_gap) / (max_length + cfg.min_gap)));
  if (m > per_lane * lanes) {
    throw Error("Infeasible", std::to_string(m) + " vehicles do not fit in " +
                                  std::to_string(lanes) + " lanes of " +
                                  format_fixed(cfg.init_span, 1) + " ft");
  }

  std::vector<std::size_t> weight(lanes, 1);
  if (have_reference) {
    for (std::size_t l = 0; l < lanes; ++l) weight[l] = pools[l].size();
  }

  std::vector<VehicleState> states(m);
  std::vector<std::vector<std::size_t>> members(lanes);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t total = 0;
    for (std::size_t l = 0; l < lanes; ++l) {
      if (members[l].size() < per_lane) total += weight[l];
    }
    std::size_t lane = 0;
    if (total == 0) {
      // Reference weights exhausted (only some lanes observed); fall back to free lanes.
      while (members[lane].size() >= per_lane) ++lane;
    } else {
      std::uint64_t r = rng.index(total);
      for (lane = 0; lane < lanes; ++lane) {
        if (members[lane].size() >= per_lane) continue;
        if (r < weight[lane]) break;
        r -= weight[lane];
      }
    }
    members[lane].push_back(i);

    VehicleState& s = states[i];
    s.vehicle_id = static_cast<std::int64_t>(i + 1);
    s.frame_id = 0;
    s.lane_id = static_cast<int>(lane + 1);
    const double center = kLaneWidth * (static_cast<double>(lane) + 0.5);
    if (!pools[lane].empty()) {
      const VehicleState& src = *pools[lane][rng.index(pools[lane].size())];
      const double offset = std::clamp(src.local_x - center, -kLaneWidth / 2, kLaneWidth / 2);
      s.local_x = snap(center + offset, 1e-4);
      s.velocity = snap(std::clamp(src.velocity, 0.0, cfg.v_max), 1e-3);
      s.vehicle_length = src.vehicle_length;
    } else {
      s.local_x = center;
      s.velocity = snap(rng.uniform(30.0, std::min(60.0, cfg.v_max)), 1e-3);
      s.vehicle_length = kDefaultLength;
    }
  }

  // Lay out each lane back to front: mandatory spacing plus a random share of
  // the slack.
  for (std::size_t l = 0; l < lanes; ++l) {
    auto& ids = members[l];
    if (ids.empty()) continue;
    double used = 0.0;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      used += states[ids[j]].vehicle_length + (j + 1 < ids.size() ? cfg.min_gap : 0.0);
    }
    const double slack = std::max(0.0, cfg.init_span - used);
    std::vector<double> cuts(ids.size());
    for (auto& c : cuts) c = rng.uniform() * slack;
    std::sort(cuts.begin(), cuts.end());
    // Local_Y is the front bumper, so the gap to the vehicle ahead subtracts
    // that vehicle's length. Positions are rounded up so the grid never eats
    // into the gap.
    double cursor = y_base;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      VehicleState& s = states[ids[j]];
      if (j > 0) cursor += s.vehicle_length + cfg.min_gap;
      const double y = cursor + cuts[j] - (j > 0 ? cuts[j - 1] : 0.0);
      s.local_y = std::ceil(y * 1e4 - 1e-6) / 1e4;
      cursor = s.local_y;
    }
  }

  InitialConditions init;
  init.states = std::move(states);
  return init;
}

GeneratorModel make_generator(std::size_t k, const GeneratorDims& dims, std::uint64_t seed) {
  GeneratorModel g;
  g.cfg = generator_config(k, dims, seed);
  g.params = init_parameters(g.cfg);
  return g;
}

GeneratorModel zero_generator(std::size_t k, const GeneratorDims& dims) {
  GeneratorModel g;
  g.cfg = generator_config(k, dims, 0);
  g.params = zero_parameters(g.cfg);
  return g;
}

Tensor generator_features(const std::vector<VehicleState>& history, std::size_t k) {
  if (history.empty()) throw Error("BadArgument", "empty history");
  Tensor x({k, kGeneratorFeatures});
  const VehicleState& last = history.back();
  const std::size_t n = history.size();
  for (std::size_t i = 0; i < k; ++i) {
    // Position i of the window maps to history index n - k + i. Slots before
    // the first state are filled by running it backwards at constant velocity.
    VehicleState s;
    if (n + i >= k) {
      s = history[n + i - k];
    } else {
      s = history[0];
      s.local_y -= static_cast<double>(k - n - i) * s.velocity * kFrameDt;
      s.acceleration = 0.0;
    }
    x(i, 0) = (s.local_x - last.local_x) / kFeatX;
    x(i, 1) = (s.local_y - last.local_y) / kFeatY;
    x(i, 2) = s.velocity / kFeatV;
    x(i, 3) = s.acceleration / kFeatA;
    x(i, 4) = static_cast<double>(s.lane_id) / kFeatLane;
    x(i, 5) = (s.local_x - lane_center(s.lane_id)) / kFeatOffset;
  }
  return x;
}

std::vector<double> generator_targets(const VehicleState& current, const VehicleState& next) {
  return {(next.local_x - current.local_x) / kTgtX, (next.local_y - current.local_y) / kTgtY,
          (next.velocity - current.velocity) / kTgtV,
          (next.acceleration - current.acceleration) / kTgtA};
}

GeneratorTrainResult train_generator(GeneratorModel& model, const Dataset& real,
                                     const GeneratorTrainOptions& options, std::uint64_t seed) {
  const std::size_t k = model.cfg.k_context;
  if (options.batch_size < 1) throw Error("BadConfig", "batch_size must be >= 1");

  struct Sample {
    Tensor input;
    std::vector<double> target;
  };
  std::size_t total = 0;
  for (const auto& t : real.trajectories) {
    if (t.states.size() > k) total += t.states.size() - k;
  }
  if (total == 0) throw Error("EmptyDataset", "no trajectory longer than k");
  const std::size_t stride =
      options.max_windows > 0 ? std::max<std::size_t>(1, (total + options.max_windows - 1) /
                                                             options.max_windows)
                              : 1;

  std::vector<Sample> samples;
  std::size_t counter = 0;
  for (const auto& t : real.trajectories) {
    if (t.states.size() <= k) continue;
    for (std::size_t start = 0; start + k < t.states.size(); ++start, ++counter) {
      if (counter % stride != 0) continue;
      std::vector<VehicleState> ctx(t.states.begin() + static_cast<std::ptrdiff_t>(start),
                                    t.states.begin() + static_cast<std::ptrdiff_t>(start + k));
      samples.push_back({generator_features(ctx, k),
                         generator_targets(t.states[start + k - 1], t.states[start + k])});
    }
  }

  GeneratorTrainResult result;
  OptimizerState opt(Adam{options.learning_rate});
  Rng rng(seed);
  const std::size_t n_params = model.params.size();
  std::vector<std::size_t> order(samples.size());
  std::vector<std::vector<double>> per_example(options.batch_size,
                                               std::vector<double>(n_params));
  std::vector<double> per_loss(options.batch_size);
  std::vector<double> grad(n_params);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t b = std::min(options.batch_size, order.size() - start);
      const auto bi = static_cast<std::ptrdiff_t>(b);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t jj = 0; jj < bi; ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        const Sample& s = samples[order[start + j]];
        auto fwd = encoder_forward(model.cfg, model.params, s.input);
        const auto lv = mean_squared_error(fwd.output.values(), s.target);
        per_loss[j] = lv.value;
        auto g = ParameterSet::unflatten(model.params.layout_ptr(),
                                         std::vector<double>(n_params, 0.0));
        encoder_backward(fwd.cache, model.params, lv.grad, g);
        std::copy(g.values().begin(), g.values().end(), per_example[j].begin());
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t j = 0; j < b; ++j) {
        for (std::size_t p = 0; p < n_params; ++p) grad[p] += per_example[j][p];
        epoch_loss += per_loss[j];
      }
      const double inv = 1.0 / static_cast<double>(b);
      for (auto& g : grad) g *= inv;
      optimizer_step(opt, model.params.values(), grad);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

Dataset rollout(const GeneratorModel& model, const InitialConditions& init,
                const GenerationConfig& cfg) {
  cfg.validate();
  const std::size_t k = model.cfg.k_context;
  Dataset ds;
  ds.origin = DataOrigin::Synthetic;
  ds.dt = kFrameDt;
  ds.trajectories.resize(init.states.size());

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t vi = 0; vi < static_cast<std::ptrdiff_t>(init.states.size()); ++vi) {
    const auto v = static_cast<std::size_t>(vi);
    Trajectory& traj = ds.trajectories[v];
    VehicleState s = init.states[v];
    s.frame_id = 0;
    traj.vehicle_id = s.vehicle_id;
    traj.states.reserve(cfg.T);
    traj.states.push_back(s);
    const double road = kLaneWidth * cfg.lane_count;
    for (std::size_t t = 1; t < cfg.T; ++t) {
      const auto out = encoder_forward(model.cfg, model.params,
                                       generator_features(traj.states, k)).output;
      VehicleState next = traj.states.back();
      next.frame_id = static_cast<std::int64_t>(t);
      next.local_x = std::clamp(next.local_x + out[0] * kTgtX, 0.0, road);
      next.local_y += out[1] * kTgtY;
      next.velocity += out[2] * kTgtV;
      next.acceleration += out[3] * kTgtA;
      next.lane_id = std::clamp(static_cast<int>(std::floor(next.local_x / kLaneWidth)) + 1, 1,
                                cfg.lane_count);
      traj.states.push_back(next);
    }
  }
  return ds;
}

}  // namespace fpott
