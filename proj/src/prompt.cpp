#include "fpott/prompt.hpp"

#include <algorithm>
#include <sstream>

#include "fpott/error.hpp"

namespace fpott {

namespace {

struct FieldNames {
  PromptField field;
  std::string_view short_name;
  std::string_view long_name;
};

constexpr std::array<FieldNames, kNumPromptFields> kFieldNames = {{
    {PromptField::LocalX, "x", "local_x"},
    {PromptField::LocalY, "y", "local_y"},
    {PromptField::Velocity, "v", "velocity"},
    {PromptField::Acceleration, "a", "acceleration"},
    {PromptField::LaneId, "lane", "lane_id"},
    {PromptField::SpaceHeadway, "gap", "space_headway"},
    {PromptField::TimeHeadway, "thw", "time_headway"},
}};

std::string_view preamble(Framing f) {
  switch (f) {
    case Framing::Terse:
      return "";
    case Framing::Narrative:
      return "vehicle track, oldest first:";
    case Framing::Instructional:
      return "predict keep, left or right from states oldest first:";
  }
  return "";
}

std::string_view framing_name(Framing f) {
  switch (f) {
    case Framing::Terse:
      return "terse";
    case Framing::Narrative:
      return "narrative";
    case Framing::Instructional:
      return "instructional";
  }
  return "";
}

std::string_view separator_name(StepSeparator s) {
  switch (s) {
    case StepSeparator::Pipe:
      return "pipe";
    case StepSeparator::Semicolon:
      return "semicolon";
    case StepSeparator::Newline:
      return "newline";
  }
  return "";
}

double field_value(const VehicleState& s, PromptField f) {
  switch (f) {
    case PromptField::LocalX:
      return s.local_x;
    case PromptField::LocalY:
      return s.local_y;
    case PromptField::Velocity:
      return s.velocity;
    case PromptField::Acceleration:
      return s.acceleration;
    case PromptField::LaneId:
      return s.lane_id;
    case PromptField::SpaceHeadway:
      return s.space_headway;
    case PromptField::TimeHeadway:
      return s.time_headway;
  }
  return 0.0;
}

bool parse_bool(std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw Error("BadConfig", "expected a boolean, got '" + std::string(v) + "'");
}

}  // namespace

std::string_view prompt_name(PromptField f) {
  return kFieldNames[static_cast<std::size_t>(f)].short_name;
}

std::string_view config_name(PromptField f) {
  return kFieldNames[static_cast<std::size_t>(f)].long_name;
}

PromptField field_from_config_name(std::string_view name) {
  for (const auto& n : kFieldNames) {
    if (n.long_name == name) return n.field;
  }
  throw Error("BadConfig", "unknown prompt field '" + std::string(name) + "'");
}

std::string_view separator_text(StepSeparator s) {
  switch (s) {
    case StepSeparator::Pipe:
      return " | ";
    case StepSeparator::Semicolon:
      return "; ";
    case StepSeparator::Newline:
      return "\n";
  }
  return " | ";
}

void PromptTemplate::validate() const {
  if (fields.empty()) throw Error("BadConfig", "prompt template selects no fields");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    for (std::size_t j = i + 1; j < fields.size(); ++j) {
      if (fields[i] == fields[j]) throw Error("BadConfig", "prompt field listed twice");
    }
  }
  if (precision < 0 || precision > kMaxPrecision) {
    throw Error("BadConfig", "prompt precision must be within 0..4");
  }
  if (context_used < 1) throw Error("BadConfig", "context_used must be >= 1");
}

std::string_view to_string(ComplexityPreset p) {
  switch (p) {
    case ComplexityPreset::Default:
      return "default";
    case ComplexityPreset::Low:
      return "low";
    case ComplexityPreset::High:
      return "high";
  }
  return "";
}

ComplexityPreset preset_from_string(std::string_view name) {
  for (auto p : {ComplexityPreset::Default, ComplexityPreset::Low, ComplexityPreset::High}) {
    if (to_string(p) == name) return p;
  }
  throw Error("BadConfig", "unknown prompt preset '" + std::string(name) + "'");
}

PromptTemplate preset_template(ComplexityPreset p, std::size_t k) {
  const std::size_t kk = std::max<std::size_t>(k, 1);
  PromptTemplate t;
  switch (p) {
    case ComplexityPreset::Default:
      t.fields = {PromptField::LocalX, PromptField::LocalY};
      t.precision = 1;
      t.framing = Framing::Terse;
      t.context_used = std::min<std::size_t>(2, kk);
      break;
    case ComplexityPreset::Low:
      t.fields = {PromptField::LocalX, PromptField::LocalY, PromptField::Velocity,
                  PromptField::LaneId};
      t.precision = 1;
      t.framing = Framing::Terse;
      t.context_used = std::max<std::size_t>(1, kk / 2);
      break;
    case ComplexityPreset::High:
      t.fields.assign(kAllPromptFields.begin(), kAllPromptFields.end());
      t.precision = 2;
      t.framing = Framing::Instructional;
      t.delta_velocity = true;
      t.gap_closing_rate = true;
      t.context_used = kk;
      break;
  }
  return t;
}

std::string render_prompt(const Window& window, const PromptTemplate& tpl) {
  tpl.validate();
  const auto& ctx = window.context;
  if (ctx.size() < tpl.context_used) {
    throw Error("ContextTooShort", "window has " + std::to_string(ctx.size()) +
                                       " states, template uses " +
                                       std::to_string(tpl.context_used));
  }
  const std::string_view sep = separator_text(tpl.separator);
  std::string out(preamble(tpl.framing));
  if (!out.empty()) out += ' ';

  for (std::size_t s = ctx.size() - tpl.context_used; s < ctx.size(); ++s) {
    if (s != ctx.size() - tpl.context_used) out += sep;
    for (std::size_t i = 0; i < tpl.fields.size(); ++i) {
      const PromptField f = tpl.fields[i];
      if (i) out += ' ';
      out += prompt_name(f);
      out += '=';
      const double v = field_value(ctx[s], f);
      out += f == PromptField::LaneId ? std::to_string(ctx[s].lane_id)
                                      : format_fixed(v, tpl.precision);
    }
  }

  if (tpl.delta_velocity || tpl.gap_closing_rate) {
    const VehicleState& last = ctx.back();
    const VehicleState& prev = ctx.size() > 1 ? ctx[ctx.size() - 2] : last;
    out += sep;
    out += kTrendMarker;
    if (tpl.delta_velocity) {
      out += " dv=" + format_fixed(last.velocity - prev.velocity, tpl.precision);
    }
    if (tpl.gap_closing_rate) {
      const double closing = (prev.space_headway - last.space_headway) / kFrameDt;
      out += " closing=" + format_fixed(closing, tpl.precision);
    }
  }
  out += ' ';
  out += kQueryClause;
  return out;
}

std::string serialize_template(const PromptTemplate& tpl) {
  std::string fields;
  for (std::size_t i = 0; i < tpl.fields.size(); ++i) {
    if (i) fields += ',';
    fields += config_name(tpl.fields[i]);
  }
  std::ostringstream s;
  s << "fields=" << fields << '\n'
    << "precision=" << tpl.precision << '\n'
    << "framing=" << framing_name(tpl.framing) << '\n'
    << "separator=" << separator_name(tpl.separator) << '\n'
    << "delta_velocity=" << (tpl.delta_velocity ? 1 : 0) << '\n'
    << "gap_closing_rate=" << (tpl.gap_closing_rate ? 1 : 0) << '\n'
    << "context_used=" << tpl.context_used << '\n';
  return s.str();
}

PromptTemplate parse_template(std::string_view text) {
  PromptTemplate t;
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("BadConfig", "template line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw Error("BadConfig", "template key repeated: " + key);
    }
    seen.push_back(key);
    try {
      if (key == "fields") {
        t.fields.clear();
        std::size_t start = 0;
        while (start <= value.size()) {
          const auto comma = value.find(',', start);
          const auto end = comma == std::string::npos ? value.size() : comma;
          t.fields.push_back(field_from_config_name(value.substr(start, end - start)));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
      } else if (key == "precision") {
        t.precision = std::stoi(value);
      } else if (key == "framing") {
        if (value == "terse") {
          t.framing = Framing::Terse;
        } else if (value == "narrative") {
          t.framing = Framing::Narrative;
        } else if (value == "instructional") {
          t.framing = Framing::Instructional;
        } else {
          throw Error("BadConfig", "unknown framing '" + value + "'");
        }
      } else if (key == "separator") {
        if (value == "pipe") {
          t.separator = StepSeparator::Pipe;
        } else if (value == "semicolon") {
          t.separator = StepSeparator::Semicolon;
        } else if (value == "newline") {
          t.separator = StepSeparator::Newline;
        } else {
          throw Error("BadConfig", "unknown separator '" + value + "'");
        }
      } else if (key == "delta_velocity") {
        t.delta_velocity = parse_bool(value);
      } else if (key == "gap_closing_rate") {
        t.gap_closing_rate = parse_bool(value);
      } else if (key == "context_used") {
        const long long c = std::stoll(value);
        if (c < 1) throw Error("BadConfig", "context_used must be >= 1");
        t.context_used = static_cast<std::size_t>(c);
      } else {
        throw Error("BadConfig", "unknown template key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw Error("BadConfig", "bad value for " + key + ": '" + value + "'");
    } catch (const std::out_of_range&) {
      throw Error("BadConfig", "bad value for " + key + ": '" + value + "'");
    }
  }
  t.validate();
  return t;
}

Mutation mutate(const PromptTemplate& tpl, Rng& rng, const MutationSpace& space) {
  std::vector<MutationKind> moves;
  if (space.fields) {
    if (tpl.fields.size() < kNumPromptFields) moves.push_back(MutationKind::AddField);
    if (tpl.fields.size() > 1) {
      moves.push_back(MutationKind::RemoveField);
      moves.push_back(MutationKind::SwapFields);
    }
  }
  if (space.precision) {
    if (tpl.precision < kMaxPrecision) moves.push_back(MutationKind::PrecisionUp);
    if (tpl.precision > 0) moves.push_back(MutationKind::PrecisionDown);
  }
  if (space.framing) moves.push_back(MutationKind::Framing);
  if (space.separator) moves.push_back(MutationKind::Separator);
  if (space.derived) {
    moves.push_back(MutationKind::ToggleDeltaVelocity);
    moves.push_back(MutationKind::ToggleGapClosing);
  }
  if (space.context) {
    if (tpl.context_used < space.max_context) moves.push_back(MutationKind::ContextUp);
    if (tpl.context_used > 1) moves.push_back(MutationKind::ContextDown);
  }

  Mutation m{tpl, false, MutationKind::AddField};
  if (moves.empty()) return m;
  m.kind = moves[rng.index(moves.size())];
  m.changed = true;
  PromptTemplate& t = m.result;
  switch (m.kind) {
    case MutationKind::AddField: {
      std::vector<PromptField> missing;
      for (auto f : kAllPromptFields) {
        if (std::find(t.fields.begin(), t.fields.end(), f) == t.fields.end()) missing.push_back(f);
      }
      const auto pos = rng.index(t.fields.size() + 1);
      t.fields.insert(t.fields.begin() + static_cast<std::ptrdiff_t>(pos),
                      missing[rng.index(missing.size())]);
      break;
    }
    case MutationKind::RemoveField:
      t.fields.erase(t.fields.begin() + static_cast<std::ptrdiff_t>(rng.index(t.fields.size())));
      break;
    case MutationKind::SwapFields: {
      const auto i = rng.index(t.fields.size() - 1);
      std::swap(t.fields[i], t.fields[i + 1]);
      break;
    }
    case MutationKind::PrecisionUp:
      ++t.precision;
      break;
    case MutationKind::PrecisionDown:
      --t.precision;
      break;
    case MutationKind::Framing: {
      const auto cur = static_cast<std::uint64_t>(t.framing);
      t.framing = static_cast<Framing>((cur + 1 + rng.index(2)) % 3);
      break;
    }
    case MutationKind::Separator: {
      const auto cur = static_cast<std::uint64_t>(t.separator);
      t.separator = static_cast<StepSeparator>((cur + 1 + rng.index(2)) % 3);
      break;
    }
    case MutationKind::ToggleDeltaVelocity:
      t.delta_velocity = !t.delta_velocity;
      break;
    case MutationKind::ToggleGapClosing:
      t.gap_closing_rate = !t.gap_closing_rate;
      break;
    case MutationKind::ContextUp:
      ++t.context_used;
      break;
    case MutationKind::ContextDown:
      --t.context_used;
      break;
  }
  return m;
}

}  // namespace fpott
