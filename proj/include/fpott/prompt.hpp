#pragma once

// Discrete prompt templates: how a trajectory window is rendered to text for
// the byte-level predictor, plus the single-coordinate mutation neighborhood
// searched by the optimizer.

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fpott/rng.hpp"
#include "fpott/trajectory_data.hpp"

namespace fpott {

enum class PromptField {
  LocalX,
  LocalY,
  Velocity,
  Acceleration,
  LaneId,
  SpaceHeadway,
  TimeHeadway,
};
inline constexpr std::size_t kNumPromptFields = 7;
inline constexpr std::array<PromptField, kNumPromptFields> kAllPromptFields = {
    PromptField::LocalX,       PromptField::LocalY,       PromptField::Velocity,
    PromptField::Acceleration, PromptField::LaneId,       PromptField::SpaceHeadway,
    PromptField::TimeHeadway};

// Short name used inside prompts ("x", "y", "v", "a", "lane", "gap", "thw").
std::string_view prompt_name(PromptField f);
// Long name used in serialized templates ("local_x", "velocity", ...).
std::string_view config_name(PromptField f);
PromptField field_from_config_name(std::string_view name);

enum class Framing { Terse, Narrative, Instructional };
enum class StepSeparator { Pipe, Semicolon, Newline };

std::string_view separator_text(StepSeparator s);

inline constexpr int kMaxPrecision = 4;

struct PromptTemplate {
  std::vector<PromptField> fields = {PromptField::LocalX, PromptField::LocalY};
  int precision = 1;
  Framing framing = Framing::Terse;
  StepSeparator separator = StepSeparator::Pipe;
  bool delta_velocity = false;
  bool gap_closing_rate = false;
  std::size_t context_used = 2;

  // Throws "BadConfig" on an empty or repeated field list, precision outside
  // 0..4, or context_used == 0.
  void validate() const;
  bool operator==(const PromptTemplate&) const = default;
};

enum class ComplexityPreset { Default, Low, High };

std::string_view to_string(ComplexityPreset p);
ComplexityPreset preset_from_string(std::string_view name);
// Context lengths are clamped to [1, k].
PromptTemplate preset_template(ComplexityPreset p, std::size_t k);

// Renders the last context_used states of the window. Within a step, fields
// are `name=value` separated by spaces; steps are joined by the template's
// separator; an optional "trend ..." segment carries derived features; the text
// ends with " next maneuver:". Throws "ContextTooShort".
std::string render_prompt(const Window& window, const PromptTemplate& tpl);

inline constexpr std::string_view kQueryClause = "next maneuver:";
inline constexpr std::string_view kTrendMarker = "trend";

// key=value lines, one per template coordinate; parse throws "BadConfig".
std::string serialize_template(const PromptTemplate& tpl);
PromptTemplate parse_template(std::string_view text);

// Which coordinates mutate may touch. A space with every flag off (or a
// template that admits no legal move) makes mutate the identity.
struct MutationSpace {
  std::size_t max_context = 1;
  bool fields = true;
  bool precision = true;
  bool framing = true;
  bool separator = true;
  bool derived = true;
  bool context = true;
};

enum class MutationKind {
  AddField,
  RemoveField,
  SwapFields,
  PrecisionUp,
  PrecisionDown,
  Framing,
  Separator,
  ToggleDeltaVelocity,
  ToggleGapClosing,
  ContextUp,
  ContextDown,
};

struct Mutation {
  PromptTemplate result;
  bool changed = false;
  MutationKind kind = MutationKind::AddField;
};

// Picks one legal move uniformly and applies it.
Mutation mutate(const PromptTemplate& tpl, Rng& rng, const MutationSpace& space);

}  // namespace fpott
