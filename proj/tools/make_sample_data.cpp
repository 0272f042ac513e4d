// Regenerates data/ngsim_sample.csv: a small multi-lane freeway micro-simulation
// (car following plus discretionary lane changes) written in the NGSIM schema.
// Velocities live on a 0.001 ft/s grid and positions on a 0.0001 ft grid so
// that y[t+1] = y[t] + v[t] * 0.1 holds exactly in the emitted file.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <vector>

#include "CLI11.hpp"
#include "fpott/rng.hpp"
#include "fpott/trajectory_data.hpp"

namespace {

constexpr double kLaneWidth = 12.0;
constexpr int kLaneChangeFrames = 30;

struct Car {
  std::int64_t id = 0;
  double length = 15.0;
  double desired = 60.0;
  std::int64_t y = 0;  // 1e-4 ft
  std::int64_t v = 0;  // 1e-3 ft/s
  int lane = 1;
  int target = 0;       // lane being entered, 0 when not changing
  int progress = 0;     // frames into the lane change
  int cooldown = 0;
  double accel = 0.0;
  double x_offset = 0.0;
  double wander = 0.0;  // lateral drift within the lane
};

double lane_center(int lane) { return kLaneWidth * (lane - 0.5); }
double pos(const Car& c) { return static_cast<double>(c.y) * 1e-4; }
double vel(const Car& c) { return static_cast<double>(c.v) * 1e-3; }

bool occupies(const Car& c, int lane) { return c.lane == lane || c.target == lane; }

// Nearest car ahead / behind in a lane (cars mid-change count in both lanes).
const Car* nearest(const std::vector<Car>& cars, const Car& me, int lane, bool ahead) {
  const Car* best = nullptr;
  for (const auto& o : cars) {
    if (o.id == me.id || !occupies(o, lane)) continue;
    const bool is_ahead = o.y > me.y || (o.y == me.y && o.id > me.id);
    if (is_ahead != ahead) continue;
    if (!best || (ahead ? o.y < best->y : o.y > best->y)) best = &o;
  }
  return best;
}

// Bumper-to-bumper gap from `back` to `front`.
double gap(const Car& back, const Car& front) { return pos(front) - pos(back) - front.length; }

double idm(const Car& me, const Car* leader) {
  const double a_max = 5.0, b = 6.0, s0 = 12.0, headway = 1.2;
  const double v = vel(me);
  double a = a_max * (1.0 - std::pow(v / me.desired, 4));
  if (leader) {
    const double s = std::max(gap(me, *leader), 0.1);
    const double dv = v - vel(*leader);
    const double s_star = s0 + std::max(0.0, v * headway + v * dv / (2.0 * std::sqrt(a_max * b)));
    a -= a_max * (s_star / s) * (s_star / s);
  }
  return std::clamp(a, -30.0, 8.0);
}

bool safe_to_enter(const std::vector<Car>& cars, const Car& me, int lane, double min_ahead,
                   double min_behind) {
  const Car* front = nearest(cars, me, lane, true);
  const Car* back = nearest(cars, me, lane, false);
  if (front && gap(me, *front) < min_ahead) return false;
  if (back && (gap(*back, me) < min_behind || vel(*back) > vel(me) + 10.0)) return false;
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the bundled NGSIM-format sample dataset"};
  std::string out = "data/ngsim_sample.csv";
  std::uint64_t seed = 3;
  int n_cars = 20;
  int frames = 1000;
  int lanes = 5;
  app.add_option("--out", out, "output CSV path");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--vehicles", n_cars, "number of vehicles");
  app.add_option("--frames", frames, "frames per vehicle");
  app.add_option("--lanes", lanes, "lane count");
  CLI11_PARSE(app, argc, argv);

  fpott::Rng rng(seed);
  // The road grows with the fleet so traffic density stays the same.
  const double density_scale = std::max(1.0, n_cars / 22.0);
  std::vector<Car> cars;
  // Slow traffic spread ahead, faster traffic entering from behind, so the
  // fast group keeps catching up and overtaking for the whole run.
  for (int i = 0; i < n_cars; ++i) {
    Car c;
    c.id = i + 1;
    const bool slow = i % 5 < 2;
    c.length = std::round(rng.uniform(14.0, 18.0) * 10.0) / 10.0;
    c.desired = slow ? rng.uniform(40.0, 50.0) : rng.uniform(60.0, 76.0);
    c.lane = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(lanes)));
    const double y0 = slow ? rng.uniform(300.0, 300.0 + 1200.0 * density_scale)
                           : rng.uniform(0.0, 600.0 * density_scale);
    c.y = static_cast<std::int64_t>(std::llround(y0 * 1e4));
    c.v = static_cast<std::int64_t>(std::llround(c.desired * 0.9 * 1e3));
    c.cooldown = static_cast<int>(rng.index(50));
    cars.push_back(c);
  }
  // Push apart initial same-lane conflicts, back to front.
  std::sort(cars.begin(), cars.end(),
            [](const Car& a, const Car& b) { return a.y != b.y ? a.y < b.y : a.id < b.id; });
  std::vector<std::int64_t> lane_front(static_cast<std::size_t>(lanes) + 1, INT64_MIN);
  for (auto& c : cars) {
    auto& front = lane_front[static_cast<std::size_t>(c.lane)];
    const auto need = static_cast<std::int64_t>(std::llround((c.length + 50.0) * 1e4));
    if (front != INT64_MIN) c.y = std::max(c.y, front + need);
    front = c.y;
  }
  std::sort(cars.begin(), cars.end(), [](const Car& a, const Car& b) { return a.id < b.id; });

  fpott::Dataset ds;
  ds.trajectories.resize(cars.size());
  for (std::size_t i = 0; i < cars.size(); ++i) ds.trajectories[i].vehicle_id = cars[i].id;

  for (int f = 0; f < frames; ++f) {
    // Decide accelerations and lane-change starts from the current snapshot.
    std::vector<double> accel(cars.size());
    std::vector<int> start_target(cars.size(), 0);
    for (std::size_t i = 0; i < cars.size(); ++i) {
      Car& c = cars[i];
      // Drivers occasionally change their mind about cruising speed.
      if (rng.bernoulli(0.01)) {
        c.desired = rng.bernoulli(0.4) ? rng.uniform(40.0, 50.0) : rng.uniform(60.0, 76.0);
      }
      const Car* lead = nearest(cars, c, c.lane, true);
      double a = idm(c, lead);
      if (c.target) a = std::min(a, idm(c, nearest(cars, c, c.target, true)));
      accel[i] = a;
      if (c.target || c.cooldown > 0) continue;

      const bool blocked = lead && gap(c, *lead) < 200.0 && vel(*lead) < c.desired - 3.0;
      if (blocked && c.lane > 1 && rng.bernoulli(0.2)) {
        const Car* left_lead = nearest(cars, c, c.lane - 1, true);
        const bool better = !left_lead || (gap(c, *left_lead) > 80.0 &&
                                           (vel(*left_lead) > vel(*lead) + 2.0 ||
                                            gap(c, *left_lead) > gap(c, *lead) + 60.0));
        if (better && safe_to_enter(cars, c, c.lane - 1, 40.0, 35.0)) start_target[i] = c.lane - 1;
      } else if (!blocked && c.lane < lanes && rng.bernoulli(0.06)) {
        const bool free = !lead || gap(c, *lead) > 200.0;
        const Car* right_lead = nearest(cars, c, c.lane + 1, true);
        const bool open = !right_lead || gap(c, *right_lead) > 250.0 ||
                          vel(*right_lead) > c.desired - 2.0;
        if (free && open && safe_to_enter(cars, c, c.lane + 1, 60.0, 50.0)) {
          start_target[i] = c.lane + 1;
        }
      }
    }

    // Record the state of frame f.
    for (std::size_t i = 0; i < cars.size(); ++i) {
      Car& c = cars[i];
      const std::int64_t v_next =
          std::max<std::int64_t>(0, c.v + std::llround(accel[i] * 0.1 * 1e3));
      fpott::VehicleState s;
      s.vehicle_id = c.id;
      s.frame_id = f + 1;
      c.wander = std::clamp(0.95 * c.wander + 0.04 * rng.normal(), -0.6, 0.6);
      s.local_x = std::round((lane_center(c.lane) + c.x_offset + c.wander) * 1e4) / 1e4;
      s.local_y = pos(c);
      s.velocity = vel(c);
      s.acceleration = static_cast<double>(v_next - c.v) / 100.0;
      s.lane_id = c.lane;
      s.vehicle_length = c.length;
      ds.trajectories[i].states.push_back(s);
      c.accel = s.acceleration;
      c.y += c.v;
      c.v = v_next;
    }

    // Lateral motion: cosine profile, lane id switches halfway across.
    for (std::size_t i = 0; i < cars.size(); ++i) {
      Car& c = cars[i];
      if (c.cooldown > 0) --c.cooldown;
      if (start_target[i]) {
        c.target = start_target[i];
        c.progress = 0;
      }
      if (!c.target) continue;
      ++c.progress;
      const double dir = c.target > c.lane ? 1.0 : -1.0;
      const double frac =
          0.5 * (1.0 - std::cos(std::numbers::pi * c.progress / kLaneChangeFrames));
      const int origin = c.target - static_cast<int>(dir);
      if (c.progress == kLaneChangeFrames / 2) c.lane = c.target;
      c.x_offset = dir * kLaneWidth * frac - (c.lane == origin ? 0.0 : dir * kLaneWidth);
      if (c.progress >= kLaneChangeFrames) {
        c.lane = c.target;
        c.target = 0;
        c.x_offset = 0.0;
        c.cooldown = 20 + static_cast<int>(rng.index(40));
      }
    }
  }

  fpott::annotate_neighbors(ds);
  fpott::write_ngsim_csv_file(ds, out);

  std::size_t left = 0, right = 0;
  for (const auto& t : ds.trajectories) {
    for (std::size_t i = 1; i < t.states.size(); ++i) {
      left += t.states[i].lane_id < t.states[i - 1].lane_id;
      right += t.states[i].lane_id > t.states[i - 1].lane_id;
    }
  }
  std::cerr << "wrote " << out << ": " << ds.trajectories.size() << " vehicles, " << frames
            << " frames, " << left << " left and " << right << " right lane changes\n";
  return 0;
}
