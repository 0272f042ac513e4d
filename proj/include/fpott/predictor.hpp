#pragma once

// Edge-side maneuver classifier: byte-level tokenizer feeding a token-embedding
// encoder with a 3-way classifier head.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpott/encoder.hpp"
#include "fpott/metrics.hpp"
#include "fpott/optimizer.hpp"
#include "fpott/prompt.hpp"
#include "fpott/trajectory_data.hpp"

namespace fpott {

inline constexpr int kPadToken = 256;
inline constexpr int kBeginToken = 257;
inline constexpr std::size_t kTokenVocab = 258;
inline constexpr std::size_t kDefaultMaxLen = 512;

using TokenSequence = std::vector<int>;

// Begin marker, then the UTF-8 bytes, right-padded to max_len. Text that does
// not fit loses its oldest (leftmost) bytes. Throws "BadArgument" if
// max_len < 2.
TokenSequence tokenize(std::string_view text, std::size_t max_len);
// Bytes of the sequence with the begin and pad markers removed.
std::string detokenize(std::span<const int> ids);

struct PredictorConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 64;
  std::size_t max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;
};

EncoderConfig encoder_config(const PredictorConfig& cfg);

struct PredictorModel {
  EncoderConfig cfg;
  ParameterSet params;
};

PredictorModel make_predictor(const PredictorConfig& cfg);
PredictorModel zero_predictor(const PredictorConfig& cfg);

struct Prediction {
  ManeuverLabel label = ManeuverLabel::LaneKeep;
  std::array<double, kNumManeuvers> probabilities{};
};

Prediction predict(const PredictorModel& model, std::string_view prompt);

struct LabeledPrompt {
  std::string text;
  ManeuverLabel label = ManeuverLabel::LaneKeep;
};

std::vector<LabeledPrompt> render_all(std::span<const Window> windows, const PromptTemplate& tpl);
std::size_t longest_prompt(std::span<const LabeledPrompt> pairs);

struct TrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  OptimizerAlgorithm optimizer = Adam{2e-3};
};

struct TrainResult {
  std::vector<double> epoch_losses;  // mean training loss per epoch
  double final_loss = 0.0;           // last epoch's mean, 0 when epochs == 0
};

// Minibatch cross-entropy training with a fresh optimizer state; examples are
// reshuffled each epoch from `seed`. Per-example gradients are summed in a
// fixed order, so results do not depend on the thread count. Throws
// "EmptyShard".
TrainResult train_local(PredictorModel& model, std::span<const LabeledPrompt> shard,
                        const TrainOptions& options, std::uint64_t seed);

struct EvalResult {
  MetricsReport metrics;
  double mean_loss = 0.0;
  std::vector<std::size_t> truths;
  std::vector<std::size_t> predictions;
};

// Throws "EmptyInput".
EvalResult evaluate(const PredictorModel& model, std::span<const LabeledPrompt> pairs);

}  // namespace fpott
