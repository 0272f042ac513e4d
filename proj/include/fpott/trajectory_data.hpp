#pragma once

// NGSIM-schema data model: parsing and emitting the 12-column CSV layout,
// windowing trajectories for next-maneuver prediction, and partitioning
// windows across simulated clients.

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fpott {

inline constexpr double kFrameDt = 0.1;  // NGSIM capture rate, 10 Hz.

struct VehicleState {
  std::int64_t vehicle_id = 0;
  std::int64_t frame_id = 0;
  double local_x = 0.0;  // ft, lateral
  double local_y = 0.0;  // ft, longitudinal
  double velocity = 0.0;
  double acceleration = 0.0;
  int lane_id = 1;  // 1 = leftmost
  double vehicle_length = 15.0;
  std::int64_t preceding_id = 0;  // 0 = none
  std::int64_t following_id = 0;
  double space_headway = 0.0;
  double time_headway = 0.0;

  bool operator==(const VehicleState&) const = default;
};

struct Trajectory {
  std::int64_t vehicle_id = 0;
  std::vector<VehicleState> states;  // frame_id strictly increasing, step 1

  bool operator==(const Trajectory&) const = default;
};

enum class ManeuverLabel : int { LaneKeep = 0, LaneChangeLeft = 1, LaneChangeRight = 2 };
inline constexpr int kNumManeuvers = 3;

std::string_view to_string(ManeuverLabel label);

struct Window {
  std::vector<VehicleState> context;
  ManeuverLabel label = ManeuverLabel::LaneKeep;
  std::int64_t source_vehicle = 0;

  bool operator==(const Window&) const = default;
};

enum class DataOrigin { Real, Synthetic };

struct Dataset {
  std::vector<Trajectory> trajectories;
  DataOrigin origin = DataOrigin::Real;
  double dt = kFrameDt;

  std::size_t state_count() const;
  bool operator==(const Dataset&) const = default;
};

// Column names of the emitted CSV, in order.
inline constexpr std::array<std::string_view, 12> kNgsimColumns = {
    "Vehicle_ID", "Frame_ID", "Local_X",   "Local_Y",   "v_Vel",         "v_Acc",
    "Lane_ID",    "v_Length", "Preceding", "Following", "Space_Headway", "Time_Headway"};

// Parses an NGSIM-style CSV. The header must name every column above (extra
// columns are ignored, order is free). Rows are grouped per vehicle and sorted
// by frame. Throws Error "MalformedRow" (with line number), "DuplicateFrame"
// or "EmptyInput".
Dataset parse_ngsim_csv(std::istream& in);
Dataset parse_ngsim_csv(std::string_view text);
Dataset read_ngsim_csv(const std::string& path);

// Header plus one row per state sorted by (vehicle_id, frame_id); floats with
// 4 fractional digits, LF line endings.
void write_ngsim_csv(const Dataset& ds, std::ostream& out);
std::string write_ngsim_csv(const Dataset& ds);
void write_ngsim_csv_file(const Dataset& ds, const std::string& path);

// Fixed-point rendering used by the CSV writer (negative zero printed as 0).
std::string format_fixed(double value, int digits);

// Recomputes Preceding/Following/Space_Headway/Time_Headway from positions:
// per frame and lane, vehicles are ordered by (local_y, vehicle_id) and each
// one's leader is the next in that order. Space headway is front-to-front
// distance; time headway is space headway over own velocity (0 when stopped).
// Vehicles without a leader get preceding 0 and zero headways.
void annotate_neighbors(Dataset& ds);

// Label of the maneuver between state index t and t + horizon. Lane ids grow
// to the right, so a decreasing id is a leftward change. Throws "OutOfRange".
ManeuverLabel derive_label(const Trajectory& traj, std::size_t t, std::size_t horizon);

// Windows of k contiguous states starting at 0, stride, 2*stride, ... while
// start + k + horizon <= length; labelled at the last context state.
std::vector<Window> extract_windows(const Dataset& ds, std::size_t k, std::size_t horizon,
                                    std::size_t stride);

// Vehicle-atomic partition: the distinct source vehicles are shuffled with the
// seed and dealt round-robin, so every client gets at least one vehicle when
// there are at least n_clients vehicles. Order within a shard follows input.
std::vector<std::vector<Window>> shard_for_clients(std::span<const Window> windows,
                                                   std::size_t n_clients, std::uint64_t seed);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Trajectory-level split after a seeded shuffle. Validation and test counts
// are floor(fraction * n); the remainder goes to train. Throws "BadFractions".
DatasetSplit split_train_val_test(const Dataset& ds, SplitFractions fractions,
                                  std::uint64_t seed);

// Downsamples every class to the size of the rarest one (seeded), then caps
// the total at max_total (0 = no cap) keeping classes balanced. Output keeps
// input order.
std::vector<Window> balance_classes(std::span<const Window> windows, std::size_t max_total,
                                    std::uint64_t seed);

std::array<std::size_t, kNumManeuvers> class_counts(std::span<const Window> windows);

}  // namespace fpott
