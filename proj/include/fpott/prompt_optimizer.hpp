#pragma once

// Metric-feedback prompt refinement: each candidate template is scored by
// training a fresh small predictor on prompts rendered with it, and a greedy
// hill climb over single-coordinate mutations keeps the best template.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fpott/predictor.hpp"
#include "fpott/prompt.hpp"
#include "fpott/trajectory_data.hpp"

namespace fpott {

inline constexpr std::size_t kMaxOptimizerIterations = 50;
inline constexpr double kLossPenalty = 0.01;

struct EvalFeedback {
  double accuracy = 0.0;
  double recall_macro = 0.0;
  double precision_macro = 0.0;
  double f1_macro = 0.0;
  double validation_loss = 0.0;

  bool operator==(const EvalFeedback&) const = default;
};

// accuracy - 0.01 * validation_loss
double feedback_score(const EvalFeedback& fb);

struct ScoreOptions {
  PredictorConfig model;  // max_len is an upper bound; the longest prompt decides
  TrainOptions train;
};

// Renders both samples, trains a fresh predictor seeded with `seed` and
// returns validation metrics. Throws "EmptySample".
EvalFeedback score_template(const PromptTemplate& tpl, std::span<const Window> train_sample,
                            std::span<const Window> val_sample, const ScoreOptions& options,
                            std::uint64_t seed);

struct OptimizerConfig {
  std::size_t max_iters = kMaxOptimizerIterations;
  MutationSpace space;
  ScoreOptions scoring;
  std::uint64_t seed = 0;
};

struct HistoryEntry {
  std::size_t iteration = 0;  // 0 is the initial template
  PromptTemplate tpl;
  EvalFeedback feedback;
  double score = 0.0;
  bool accepted = false;
  double incumbent_score = 0.0;  // after this iteration's decision
};

struct OptState {
  PromptTemplate incumbent;
  double incumbent_score = 0.0;
  std::size_t iteration = 0;
  std::vector<HistoryEntry> history;
  std::uint64_t rng_seed = 0;
};

// Greedy hill climb: mutate the incumbent, score, accept iff the score is
// strictly higher. Every candidate is scored with the same training seed, and
// repeated candidates reuse their first score. Throws "BadConfig" when
// max_iters exceeds 50; propagates "EmptySample".
OptState optimize(const PromptTemplate& initial, std::span<const Window> train_sample,
                  std::span<const Window> val_sample, const OptimizerConfig& cfg);

inline constexpr std::string_view kHistoryCsvHeader =
    "iteration,score,accuracy,loss,accepted,incumbent_score,template";

// One row per history entry; the template column is its serialized form with
// lines joined by ';'.
std::string history_csv(const OptState& state);

}  // namespace fpott
