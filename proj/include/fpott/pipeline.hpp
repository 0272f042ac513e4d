#pragma once

// Subcommands behind the fpott CLI. Each cmd_* writes its artifacts under the
// configured output directory, prints a summary to `out`, diagnostics to
// `err`, and returns the process exit code: 0 success, 1 domain failure,
// 2 usage, config or parse failure.

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "fpott/config.hpp"
#include "fpott/federated.hpp"
#include "fpott/metrics.hpp"
#include "fpott/prompt.hpp"
#include "fpott/prompt_optimizer.hpp"
#include "fpott/synthetic_generator.hpp"

namespace fpott {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct PreparedWindows {
  std::vector<Window> train, val, test;
};

// Trajectory-level split with `seed`, windows of length data.k, then class
// balancing (train capped at data.max_train, val and test at data.max_eval).
PreparedWindows prepare_windows(const Dataset& ds, const RunConfig& cfg, std::uint64_t seed);

struct GenerateOutcome {
  Dataset data;
  ValidationReport report;
  std::size_t repair_sweeps = 0;
};

// Trains (or loads) the generator, samples a scene, rolls out and
// post-processes. Writes synthetic.csv, validation_report.txt and
// generator.bin.
GenerateOutcome run_generate(const RunConfig& cfg);

struct TrainOutcome {
  PromptTemplate tpl;
  std::optional<OptState> prompt_search;
  FederatedRun run;
  PredictorModel model;  // final cloud model
  // Per client: shard reads in total and reads made outside local training.
  std::vector<std::size_t> shard_reads;
  std::vector<std::size_t> stray_shard_reads;
};

// Optional prompt search, then federated training. Writes model.bin,
// model.json, template.txt, rounds.csv, config.json and, after a prompt
// search, prompt_history.csv.
TrainOutcome run_train(const RunConfig& cfg);

struct PresetScores {
  std::string preset;
  std::vector<MetricsReport> per_seed;
  MetricsReport mean;
};

struct CompareOutcome {
  std::array<PresetScores, 3> presets;
  bool ordering_holds = false;  // mean accuracy: third >= second >= first
  double margin = 0.0;          // mean accuracy: third - first
};

// Trains one model per (seed, preset) on identical windows and seeds and
// evaluates it on the validation split. Writes compare_prompts.csv (means)
// and compare_prompts_seeds.csv.
CompareOutcome run_compare_prompts(const RunConfig& cfg);

int cmd_generate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_validate(const RunConfig& cfg, const std::string& input, std::ostream& out,
                 std::ostream& err);
int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_compare_prompts(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// Full CLI: `fpott <subcommand> [--config <path>] [--out <dir>] [--seed <n>]
// [--input <csv>]`. Honors FPOTT_THREADS.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fpott
