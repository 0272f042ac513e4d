#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "fpott/error.hpp"
#include "fpott/synthetic_generator.hpp"

namespace fpott {

namespace {

// Grid units: positions in 1e-4 ft, velocities in 1e-3 ft/s. At 10 Hz one
// velocity unit moves a vehicle exactly one position unit per frame.
constexpr double kPosUnit = 1e-4;
constexpr double kVelUnit = 1e-3;

std::int64_t to_pos(double y) { return std::llround(y / kPosUnit); }
std::int64_t to_vel(double v) { return std::llround(v / kVelUnit); }
double from_pos(std::int64_t y) { return static_cast<double>(y) * kPosUnit; }
double from_vel(std::int64_t v) { return static_cast<double>(v) * kVelUnit; }

struct Slot {
  std::size_t traj;
  std::size_t index;
};

// frame_id -> states present in that frame.
std::map<std::int64_t, std::vector<Slot>> index_frames(const Dataset& ds) {
  std::map<std::int64_t, std::vector<Slot>> frames;
  for (std::size_t t = 0; t < ds.trajectories.size(); ++t) {
    const auto& states = ds.trajectories[t].states;
    for (std::size_t i = 0; i < states.size(); ++i) frames[states[i].frame_id].push_back({t, i});
  }
  return frames;
}

std::vector<CollisionViolation> frame_collisions(const Dataset& ds, std::int64_t frame,
                                                 const std::vector<Slot>& slots, double min_gap) {
  std::vector<const VehicleState*> present;
  present.reserve(slots.size());
  for (const auto& s : slots) present.push_back(&ds.trajectories[s.traj].states[s.index]);
  std::sort(present.begin(), present.end(), [](const VehicleState* a, const VehicleState* b) {
    if (a->lane_id != b->lane_id) return a->lane_id < b->lane_id;
    if (a->local_y != b->local_y) return a->local_y < b->local_y;
    return a->vehicle_id < b->vehicle_id;
  });
  std::vector<CollisionViolation> out;
  for (std::size_t i = 0; i + 1 < present.size(); ++i) {
    const VehicleState& f = *present[i];
    const VehicleState& l = *present[i + 1];
    if (f.lane_id != l.lane_id) continue;
    const double gap = l.local_y - f.local_y - l.vehicle_length;
    // Compared on the position grid so values that print identically agree.
    if (to_pos(gap) < to_pos(min_gap)) out.push_back({frame, f.vehicle_id, l.vehicle_id, gap});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.follower_id != b.follower_id ? a.follower_id < b.follower_id
                                          : a.leader_id < b.leader_id;
  });
  return out;
}

void recompute_acceleration(Trajectory& traj, double a_max) {
  auto& s = traj.states;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    const double a = static_cast<double>(to_vel(s[i + 1].velocity) - to_vel(s[i].velocity)) *
                     kVelUnit / kFrameDt;
    s[i].acceleration = std::clamp(std::round(a * 1e4) / 1e4, -a_max, a_max);
  }
  if (s.size() >= 2) s.back().acceleration = s[s.size() - 2].acceleration;
}

// Moves the follower back so it sits exactly min_gap behind the leader at
// `index`, keeping y[t+1] = y[t] + v[t] * dt. Returns the earliest state index
// whose position changed.
std::size_t repair_follower(Trajectory& follower, std::size_t index, const VehicleState& leader,
                            double min_gap) {
  auto& s = follower.states;
  std::vector<std::int64_t> y(s.size()), v(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = to_pos(s[i].local_y);
    v[i] = to_vel(s[i].velocity);
  }
  const std::int64_t target =
      to_pos(leader.local_y) - to_pos(leader.vehicle_length) - to_pos(min_gap);
  std::int64_t excess = y[index] - target;
  std::size_t first_changed = index;  // first state whose velocity or position moved
  bool shifted_start = false;
  if (excess > 0) {
    for (std::size_t i = index; i-- > 0 && excess > 0;) {
      const std::int64_t take = std::min(v[i], excess);
      if (take > 0) {
        v[i] -= take;
        excess -= take;
        first_changed = i;
      }
    }
    if (excess > 0) {
      y[0] -= excess;
      first_changed = 0;
      shifted_start = true;
    }
  }
  v[index] = to_vel(leader.velocity);
  for (std::size_t i = first_changed; i + 1 < s.size(); ++i) y[i + 1] = y[i] + v[i];
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i].local_y = from_pos(y[i]);
    s[i].velocity = from_vel(v[i]);
  }
  return shifted_start ? 0 : std::min(first_changed + 1, index);
}

// One pass over the frames in order. After each repair the scan resumes at the
// earliest frame the repair touched. Returns false when the repair budget for
// the pass ran out.
bool repair_sweep(Dataset& ds, double min_gap, double a_max) {
  const auto frames = index_frames(ds);
  std::vector<std::int64_t> order;
  for (const auto& [f, _] : frames) order.push_back(f);
  std::map<std::int64_t, std::size_t> position;
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;

  std::vector<bool> touched(ds.trajectories.size(), false);
  std::size_t budget = 4 * ds.state_count() + 16;
  std::size_t fi = 0;
  while (fi < order.size()) {
    const std::int64_t frame = order[fi];
    const auto& slots = frames.at(frame);
    const auto violations = frame_collisions(ds, frame, slots, min_gap);
    if (violations.empty()) {
      ++fi;
      continue;
    }
    if (budget-- == 0) return false;
    const auto& c = violations.front();
    Slot fs{}, ls{};
    for (const auto& s : slots) {
      const auto id = ds.trajectories[s.traj].vehicle_id;
      if (id == c.follower_id) fs = s;
      if (id == c.leader_id) ls = s;
    }
    const VehicleState leader = ds.trajectories[ls.traj].states[ls.index];
    Trajectory& ft = ds.trajectories[fs.traj];
    const std::size_t earliest = repair_follower(ft, fs.index, leader, min_gap);
    touched[fs.traj] = true;
    fi = std::min(fi, position.at(ft.states[earliest].frame_id));
  }
  for (std::size_t t = 0; t < ds.trajectories.size(); ++t) {
    if (touched[t]) recompute_acceleration(ds.trajectories[t], a_max);
  }
  return true;
}

}  // namespace

bool ValidationReport::clean() const {
  return collision_violations.empty() && velocity_violations.empty() &&
         kinematic_residual == 0.0;
}

std::string ValidationReport::to_text() const {
  std::ostringstream out;
  out << "status: " << (clean() ? "clean" : "violations") << '\n'
      << "collisions: " << collision_violations.size() << '\n'
      << "velocity_violations: " << velocity_violations.size() << '\n'
      << "kinematic_residual: " << format_fixed(kinematic_residual, 9) << '\n';
  for (const auto& c : collision_violations) {
    out << "collision frame=" << c.frame << " follower=" << c.follower_id
        << " leader=" << c.leader_id << " gap=" << format_fixed(c.gap, 4) << '\n';
  }
  for (const auto& v : velocity_violations) {
    out << "velocity frame=" << v.frame << " vehicle=" << v.vehicle_id
        << " value=" << format_fixed(v.value, 4) << '\n';
  }
  return out.str();
}

std::vector<CollisionViolation> check_collisions(const Dataset& ds, double min_gap) {
  std::vector<CollisionViolation> out;
  for (const auto& [frame, slots] : index_frames(ds)) {
    auto v = frame_collisions(ds, frame, slots, min_gap);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

std::vector<VelocityViolation> check_velocities(const Dataset& ds, double v_max) {
  std::vector<VelocityViolation> out;
  for (const auto& t : ds.trajectories) {
    for (const auto& s : t.states) {
      if (!(s.velocity >= 0.0 && s.velocity <= v_max)) {
        out.push_back({s.frame_id, s.vehicle_id, s.velocity});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.vehicle_id < b.vehicle_id;
  });
  return out;
}

double kinematic_residual(const Dataset& ds) {
  double worst = 0.0;
  for (const auto& t : ds.trajectories) {
    for (std::size_t i = 0; i + 1 < t.states.size(); ++i) {
      const auto& a = t.states[i];
      const auto& b = t.states[i + 1];
      if (b.frame_id != a.frame_id + 1) continue;
      const double r = std::abs(b.local_y - (a.local_y + a.velocity * ds.dt));
      worst = std::max(worst, std::round(r * 1e9) / 1e9);
    }
  }
  return worst;
}

ValidationReport validate_dataset(const Dataset& ds, double min_gap, double v_max) {
  ValidationReport r;
  r.collision_violations = check_collisions(ds, min_gap);
  r.velocity_violations = check_velocities(ds, v_max);
  r.kinematic_residual = kinematic_residual(ds);
  return r;
}

Trajectory smooth_trajectory(const Trajectory& traj, std::size_t w, double dt) {
  if (w < 1 || w % 2 == 0) throw Error("BadConfig", "smoothing window must be odd");
  Trajectory out = traj;
  auto& s = out.states;
  const std::size_t n = s.size();
  const std::size_t half = w / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = std::min({half, i, n - 1 - i});
    const std::size_t lo = i - r;
    const std::size_t hi = i + r;
    double sx = 0.0, sy = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) {
      sx += traj.states[j].local_x;
      sy += traj.states[j].local_y;
    }
    const auto count = static_cast<double>(hi - lo + 1);
    s[i].local_x = sx / count;
    s[i].local_y = sy / count;
  }
  if (n >= 2) {
    for (std::size_t i = 0; i + 1 < n; ++i) s[i].velocity = (s[i + 1].local_y - s[i].local_y) / dt;
    s[n - 1].velocity = s[n - 2].velocity;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      s[i].acceleration = (s[i + 1].velocity - s[i].velocity) / dt;
    }
    s[n - 1].acceleration = s[n - 2].acceleration;
  }
  return out;
}

Dataset normalize_velocity(const Dataset& ds, double v_max, double a_max) {
  Dataset out = ds;
  out.dt = kFrameDt;
  for (auto& t : out.trajectories) {
    auto& s = t.states;
    if (s.empty()) continue;
    std::int64_t y = to_pos(s[0].local_y);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::int64_t v = std::clamp<std::int64_t>(to_vel(s[i].velocity), 0, to_vel(v_max));
      s[i].local_x = std::round(s[i].local_x / kPosUnit) * kPosUnit;
      s[i].local_y = from_pos(y);
      s[i].velocity = from_vel(v);
      s[i].acceleration = std::clamp(s[i].acceleration, -a_max, a_max);
      y += v;
    }
  }
  return out;
}

PostProcessResult post_process(const Dataset& raw, const GenerationConfig& cfg) {
  cfg.validate();
  PostProcessResult result;
  Dataset ds = raw;
  for (auto& t : ds.trajectories) t = smooth_trajectory(t, cfg.smoothing_window, raw.dt);
  ds = normalize_velocity(ds, cfg.v_max, cfg.a_max);

  while (!check_collisions(ds, cfg.min_gap).empty()) {
    if (result.repair_sweeps == kMaxRepairSweeps) {
      throw Error("Unrepairable", std::to_string(check_collisions(ds, cfg.min_gap).size()) +
                                      " collisions left after " +
                                      std::to_string(kMaxRepairSweeps) + " repair sweeps");
    }
    ++result.repair_sweeps;
    repair_sweep(ds, cfg.min_gap, cfg.a_max);
  }

  annotate_neighbors(ds);
  result.report = validate_dataset(ds, cfg.min_gap, cfg.v_max);
  if (!result.report.clean()) {
    throw Error("Unrepairable", "post-processed data failed validation:\n" +
                                    result.report.to_text());
  }
  result.data = std::move(ds);
  return result;
}

}  // namespace fpott
