#include "fpott/trajectory_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "fpott/error.hpp"
#include "fpott/rng.hpp"

namespace fpott {

std::string_view to_string(ManeuverLabel label) {
  switch (label) {
    case ManeuverLabel::LaneKeep:
      return "LaneKeep";
    case ManeuverLabel::LaneChangeLeft:
      return "LaneChangeLeft";
    case ManeuverLabel::LaneChangeRight:
      return "LaneChangeRight";
  }
  return "?";
}

std::size_t Dataset::state_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.states.size();
  return n;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void malformed(std::size_t line_no, const std::string& what) {
  throw Error("MalformedRow", "line " + std::to_string(line_no) + ": " + what);
}

double parse_double(std::string_view field, std::size_t line_no, std::string_view column) {
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    malformed(line_no, "column " + std::string(column) + " is not numeric: '" +
                           std::string(field) + "'");
  }
  return value;
}

std::int64_t parse_integer(std::string_view field, std::size_t line_no, std::string_view column) {
  const double v = parse_double(field, line_no, column);
  if (v != std::floor(v) || std::abs(v) > 9.0e15) {
    malformed(line_no, "column " + std::string(column) + " is not an integer: '" +
                           std::string(field) + "'");
  }
  return static_cast<std::int64_t>(v);
}

struct ParsedRow {
  VehicleState state;
  std::size_t line_no;
};

}  // namespace

std::string format_fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  std::string s(buf);
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

Dataset parse_ngsim_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string_view> header;
  std::string header_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header_line = line;
      break;
    }
  }
  if (header_line.empty()) throw Error("EmptyInput", "no header row");
  header = split_commas(header_line);

  std::array<std::size_t, kNgsimColumns.size()> col{};
  for (std::size_t c = 0; c < kNgsimColumns.size(); ++c) {
    const auto it = std::find(header.begin(), header.end(), kNgsimColumns[c]);
    if (it == header.end()) {
      malformed(line_no, "header lacks column " + std::string(kNgsimColumns[c]));
    }
    col[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<ParsedRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size()) {
      malformed(line_no, "expected " + std::to_string(header.size()) + " columns, got " +
                             std::to_string(fields.size()));
    }
    auto f = [&](std::size_t c) { return fields[col[c]]; };
    VehicleState s;
    s.vehicle_id = parse_integer(f(0), line_no, kNgsimColumns[0]);
    s.frame_id = parse_integer(f(1), line_no, kNgsimColumns[1]);
    s.local_x = parse_double(f(2), line_no, kNgsimColumns[2]);
    s.local_y = parse_double(f(3), line_no, kNgsimColumns[3]);
    s.velocity = parse_double(f(4), line_no, kNgsimColumns[4]);
    s.acceleration = parse_double(f(5), line_no, kNgsimColumns[5]);
    s.lane_id = static_cast<int>(parse_integer(f(6), line_no, kNgsimColumns[6]));
    s.vehicle_length = parse_double(f(7), line_no, kNgsimColumns[7]);
    s.preceding_id = parse_integer(f(8), line_no, kNgsimColumns[8]);
    s.following_id = parse_integer(f(9), line_no, kNgsimColumns[9]);
    s.space_headway = parse_double(f(10), line_no, kNgsimColumns[10]);
    s.time_headway = parse_double(f(11), line_no, kNgsimColumns[11]);
    if (s.vehicle_id < 1) malformed(line_no, "Vehicle_ID must be positive");
    if (s.frame_id < 0) malformed(line_no, "Frame_ID must be non-negative");
    if (s.lane_id < 1) malformed(line_no, "Lane_ID must be >= 1");
    if (!(s.vehicle_length > 0.0)) malformed(line_no, "v_Length must be positive");
    if (s.space_headway < 0.0) malformed(line_no, "Space_Headway must be non-negative");
    rows.push_back({s, line_no});
  }
  if (rows.empty()) throw Error("EmptyInput", "header present but no data rows");

  std::stable_sort(rows.begin(), rows.end(), [](const ParsedRow& a, const ParsedRow& b) {
    if (a.state.vehicle_id != b.state.vehicle_id) return a.state.vehicle_id < b.state.vehicle_id;
    return a.state.frame_id < b.state.frame_id;
  });

  Dataset ds;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (ds.trajectories.empty() || ds.trajectories.back().vehicle_id != r.state.vehicle_id) {
      ds.trajectories.push_back({r.state.vehicle_id, {}});
    } else {
      const auto prev = ds.trajectories.back().states.back().frame_id;
      if (prev == r.state.frame_id) {
        throw Error("DuplicateFrame", "line " + std::to_string(r.line_no) + ": vehicle " +
                                          std::to_string(r.state.vehicle_id) + " frame " +
                                          std::to_string(r.state.frame_id) + " repeated");
      }
      if (r.state.frame_id != prev + 1) {
        malformed(r.line_no, "frame gap for vehicle " + std::to_string(r.state.vehicle_id) +
                                 " between frames " + std::to_string(prev) + " and " +
                                 std::to_string(r.state.frame_id));
      }
    }
    ds.trajectories.back().states.push_back(r.state);
  }
  return ds;
}

Dataset parse_ngsim_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_ngsim_csv(in);
}

Dataset read_ngsim_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("EmptyInput", "cannot open " + path);
  return parse_ngsim_csv(in);
}

void write_ngsim_csv(const Dataset& ds, std::ostream& out) {
  for (std::size_t c = 0; c < kNgsimColumns.size(); ++c) {
    out << (c ? "," : "") << kNgsimColumns[c];
  }
  out << '\n';

  std::vector<const Trajectory*> order;
  for (const auto& t : ds.trajectories) order.push_back(&t);
  std::sort(order.begin(), order.end(),
            [](const Trajectory* a, const Trajectory* b) { return a->vehicle_id < b->vehicle_id; });

  std::string row;
  for (const auto* t : order) {
    std::vector<const VehicleState*> states;
    for (const auto& s : t->states) states.push_back(&s);
    std::stable_sort(states.begin(), states.end(), [](const auto* a, const auto* b) {
      return a->frame_id < b->frame_id;
    });
    for (const auto* s : states) {
      row.clear();
      row += std::to_string(s->vehicle_id);
      row += ',' + std::to_string(s->frame_id);
      row += ',' + format_fixed(s->local_x, 4);
      row += ',' + format_fixed(s->local_y, 4);
      row += ',' + format_fixed(s->velocity, 4);
      row += ',' + format_fixed(s->acceleration, 4);
      row += ',' + std::to_string(s->lane_id);
      row += ',' + format_fixed(s->vehicle_length, 4);
      row += ',' + std::to_string(s->preceding_id);
      row += ',' + std::to_string(s->following_id);
      row += ',' + format_fixed(s->space_headway, 4);
      row += ',' + format_fixed(s->time_headway, 4);
      row += '\n';
      out << row;
    }
  }
}

std::string write_ngsim_csv(const Dataset& ds) {
  std::ostringstream out;
  write_ngsim_csv(ds, out);
  return out.str();
}

void write_ngsim_csv_file(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  write_ngsim_csv(ds, out);
}

void annotate_neighbors(Dataset& ds) {
  // frame -> (lane, y, id, state*)
  struct Slot {
    int lane;
    double y;
    std::int64_t id;
    VehicleState* state;
  };
  std::map<std::int64_t, std::vector<Slot>> frames;
  for (auto& traj : ds.trajectories) {
    for (auto& s : traj.states) frames[s.frame_id].push_back({s.lane_id, s.local_y, s.vehicle_id, &s});
  }
  for (auto& [frame, slots] : frames) {
    std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
      if (a.lane != b.lane) return a.lane < b.lane;
      if (a.y != b.y) return a.y < b.y;
      return a.id < b.id;
    });
    for (std::size_t i = 0; i < slots.size(); ++i) {
      VehicleState& s = *slots[i].state;
      const bool has_leader = i + 1 < slots.size() && slots[i + 1].lane == slots[i].lane;
      const bool has_follower = i > 0 && slots[i - 1].lane == slots[i].lane;
      s.following_id = has_follower ? slots[i - 1].id : 0;
      if (has_leader) {
        s.preceding_id = slots[i + 1].id;
        s.space_headway = slots[i + 1].y - s.local_y;
        s.time_headway = s.velocity > 0.0 ? s.space_headway / s.velocity : 0.0;
      } else {
        s.preceding_id = 0;
        s.space_headway = 0.0;
        s.time_headway = 0.0;
      }
    }
  }
}

ManeuverLabel derive_label(const Trajectory& traj, std::size_t t, std::size_t horizon) {
  if (t + horizon >= traj.states.size()) {
    throw Error("OutOfRange", "t + horizon = " + std::to_string(t + horizon) +
                                  " beyond trajectory of length " +
                                  std::to_string(traj.states.size()));
  }
  const int now = traj.states[t].lane_id;
  const int later = traj.states[t + horizon].lane_id;
  if (later < now) return ManeuverLabel::LaneChangeLeft;
  if (later > now) return ManeuverLabel::LaneChangeRight;
  return ManeuverLabel::LaneKeep;
}

std::vector<Window> extract_windows(const Dataset& ds, std::size_t k, std::size_t horizon,
                                    std::size_t stride) {
  if (k < 1 || horizon < 1 || stride < 1) {
    throw Error("BadArgument", "k, horizon and stride must all be >= 1");
  }
  std::vector<Window> out;
  for (const auto& traj : ds.trajectories) {
    const std::size_t len = traj.states.size();
    for (std::size_t start = 0; start + k + horizon <= len; start += stride) {
      Window w;
      w.context.assign(traj.states.begin() + static_cast<std::ptrdiff_t>(start),
                       traj.states.begin() + static_cast<std::ptrdiff_t>(start + k));
      w.label = derive_label(traj, start + k - 1, horizon);
      w.source_vehicle = traj.vehicle_id;
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::vector<std::vector<Window>> shard_for_clients(std::span<const Window> windows,
                                                   std::size_t n_clients, std::uint64_t seed) {
  if (n_clients < 1) throw Error("BadArgument", "n_clients must be >= 1");
  std::vector<std::int64_t> vehicles;
  for (const auto& w : windows) vehicles.push_back(w.source_vehicle);
  std::sort(vehicles.begin(), vehicles.end());
  vehicles.erase(std::unique(vehicles.begin(), vehicles.end()), vehicles.end());
  Rng rng(derive_seed(seed, 0x5a4d));
  rng.shuffle(vehicles);

  std::map<std::int64_t, std::size_t> owner;
  for (std::size_t i = 0; i < vehicles.size(); ++i) owner[vehicles[i]] = i % n_clients;

  std::vector<std::vector<Window>> shards(n_clients);
  for (const auto& w : windows) shards[owner.at(w.source_vehicle)].push_back(w);
  return shards;
}

DatasetSplit split_train_val_test(const Dataset& ds, SplitFractions f, std::uint64_t seed) {
  const double sum = f.train + f.val + f.test;
  if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0) || std::abs(sum - 1.0) > 1e-9) {
    throw Error("BadFractions", "fractions must be positive and sum to 1");
  }
  const std::size_t n = ds.trajectories.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x5917));
  rng.shuffle(idx);

  const auto n_val = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(f.test * static_cast<double>(n) + 1e-9));
  const std::size_t n_train = n - n_val - n_test;

  DatasetSplit out;
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    d->origin = ds.origin;
    d->dt = ds.dt;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& target = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    target.trajectories.push_back(ds.trajectories[idx[i]]);
  }
  auto by_id = [](const Trajectory& a, const Trajectory& b) { return a.vehicle_id < b.vehicle_id; };
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    std::sort(d->trajectories.begin(), d->trajectories.end(), by_id);
  }
  return out;
}

std::array<std::size_t, kNumManeuvers> class_counts(std::span<const Window> windows) {
  std::array<std::size_t, kNumManeuvers> counts{};
  for (const auto& w : windows) ++counts[static_cast<std::size_t>(w.label)];
  return counts;
}

std::vector<Window> balance_classes(std::span<const Window> windows, std::size_t max_total,
                                    std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumManeuvers> by_class;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    by_class[static_cast<std::size_t>(windows[i].label)].push_back(i);
  }
  std::size_t per_class = SIZE_MAX;
  std::size_t present = 0;
  for (const auto& c : by_class) {
    if (!c.empty()) {
      per_class = std::min(per_class, c.size());
      ++present;
    }
  }
  if (present == 0) return {};
  if (max_total > 0) per_class = std::min(per_class, max_total / present);

  Rng rng(derive_seed(seed, 0xba1a));
  std::vector<std::size_t> keep;
  for (auto& c : by_class) {
    if (c.empty()) continue;
    rng.shuffle(c);
    keep.insert(keep.end(), c.begin(), c.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Window> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(windows[i]);
  return out;
}

}  // namespace fpott
