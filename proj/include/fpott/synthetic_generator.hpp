#pragma once

// Synthetic scene generation: initial scenes, per-vehicle autoregressive
// rollout with a transformer regressor over state deltas, and the
// post-processing battery (smoothing, velocity normalization, collision
// repair) that certifies the output.

#include <cstdint>
#include <string>
#include <vector>

#include "fpott/encoder.hpp"
#include "fpott/trajectory_data.hpp"

namespace fpott {

struct GenerationConfig {
  std::size_t T = 200;  // frames per vehicle
  std::size_t k = 10;   // context length
  std::uint64_t seed = 0;
  double v_max = 80.0;  // ft/s
  double a_max = 11.2;  // ft/s^2
  int lane_count = 5;
  double min_gap = 5.0;  // ft, bumper to bumper
  std::size_t smoothing_window = 5;
  double init_span = 1000.0;  // longitudinal extent of a sampled scene, ft

  // Throws "BadConfig".
  void validate() const;
};

struct InitialConditions {
  std::vector<VehicleState> states;  // frame 0, one per vehicle
};

// Scene sampling. With a reference dataset, lanes, velocities, lateral offsets
// and lengths are drawn from the reference's per-lane empirical distribution;
// without one, lanes are uniform, velocities U[30, 60] ft/s and lengths 15 ft.
// Longitudinal positions are laid out per lane with at least min_gap between
// vehicles and the remaining slack of init_span spread at random. Throws
// "Infeasible" when m vehicles cannot fit, "BadArgument" when m == 0.
InitialConditions sample_initial_conditions(const Dataset* reference, std::size_t m,
                                            const GenerationConfig& cfg, std::uint64_t seed);

// Per-position input features and per-step target deltas, both scaled to
// O(1) ranges. Features: x and y relative to the newest context state,
// velocity, acceleration, lane, lateral offset from the lane center. Targets:
// next-minus-current x, y, v, a.
inline constexpr std::size_t kGeneratorFeatures = 6;
inline constexpr std::size_t kGeneratorTargets = 4;

struct GeneratorModel {
  EncoderConfig cfg;
  ParameterSet params;
};

struct GeneratorDims {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 64;
};

GeneratorModel make_generator(std::size_t k, const GeneratorDims& dims, std::uint64_t seed);
GeneratorModel zero_generator(std::size_t k, const GeneratorDims& dims);

// Feature matrix [k x kGeneratorFeatures] for the newest k entries of
// `history`. Short histories are left-padded with history[0] run backwards at
// constant velocity.
Tensor generator_features(const std::vector<VehicleState>& history, std::size_t k);
std::vector<double> generator_targets(const VehicleState& current, const VehicleState& next);

struct GeneratorTrainOptions {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t max_windows = 2000;  // evenly strided subsample of the training windows
};

struct GeneratorTrainResult {
  std::vector<double> epoch_losses;
};

// Teacher-forced MSE on scaled deltas. Throws "EmptyDataset" when no window
// of length k + 1 exists.
GeneratorTrainResult train_generator(GeneratorModel& model, const Dataset& real,
                                     const GeneratorTrainOptions& options, std::uint64_t seed);

// Autoregressive rollout of every vehicle for T frames (frame ids 0..T-1).
// Lateral position is kept on the road and the lane follows from it (12 ft
// lanes). The result carries no validity guarantees.
Dataset rollout(const GeneratorModel& model, const InitialConditions& init,
                const GenerationConfig& cfg);

// ---------------------------------------------------------------- validators

struct CollisionViolation {
  std::int64_t frame = 0;
  std::int64_t follower_id = 0;
  std::int64_t leader_id = 0;
  double gap = 0.0;
  bool operator==(const CollisionViolation&) const = default;
};

struct VelocityViolation {
  std::int64_t frame = 0;
  std::int64_t vehicle_id = 0;
  double value = 0.0;
  bool operator==(const VelocityViolation&) const = default;
};

struct ValidationReport {
  std::vector<CollisionViolation> collision_violations;
  std::vector<VelocityViolation> velocity_violations;
  double kinematic_residual = 0.0;  // ft, max over all consecutive frame pairs

  bool clean() const;
  // Line-oriented summary followed by one line per violation.
  std::string to_text() const;
};

// Per frame and lane, vehicles ordered by (local_y, vehicle_id); each
// consecutive pair is a violation iff leader.y - follower.y - leader.length <
// min_gap (a violating non-adjacent pair always implies a violating adjacent
// one). Sorted by (frame, follower, leader).
std::vector<CollisionViolation> check_collisions(const Dataset& ds, double min_gap);
std::vector<VelocityViolation> check_velocities(const Dataset& ds, double v_max);
// max |y[t+1] - (y[t] + v[t] * dt)|, rounded to 1e-9 ft so that floating-point
// noise far below the CSV resolution does not register.
double kinematic_residual(const Dataset& ds);
ValidationReport validate_dataset(const Dataset& ds, double min_gap, double v_max);

// ---------------------------------------------------------------- post-processing

// Centered moving average of local_x and local_y. Near the ends the window
// shrinks symmetrically, so straight-line motion is left untouched; velocity and acceleration re-derived by forward differences with the
// last frame copying the previous one. Throws "BadConfig" for an even w.
Trajectory smooth_trajectory(const Trajectory& traj, std::size_t w, double dt = kFrameDt);

// Clamps velocity to [0, v_max] and acceleration to [-a_max, a_max], then
// re-integrates local_y forward from frame 0 at 10 Hz. Positions are kept on a
// 1e-4 ft grid and velocities on a 1e-3 ft/s grid, so the integration is exact
// and survives a CSV round trip.
Dataset normalize_velocity(const Dataset& ds, double v_max, double a_max);

struct PostProcessResult {
  Dataset data;
  ValidationReport report;
  std::size_t repair_sweeps = 0;
};

// smooth -> normalize_velocity -> collision repair -> final validation.
// Repair places a violating follower exactly min_gap behind its leader at the
// violating frame and gives it the leader's velocity there; the backward jump
// is absorbed by lowering the follower's earlier velocities (never below 0,
// shifting frame 0 back if needed) so the trajectory stays kinematically
// exact. Neighbor columns are recomputed afterwards. Throws "Unrepairable"
// if violations remain after 3 sweeps.
PostProcessResult post_process(const Dataset& raw, const GenerationConfig& cfg);

inline constexpr std::size_t kMaxRepairSweeps = 3;

}  // namespace fpott
