#pragma once

// Run configuration: one JSON document with a section per module. Every
// section and key is optional; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fpott/federated.hpp"
#include "fpott/predictor.hpp"
#include "fpott/synthetic_generator.hpp"
#include "fpott/trajectory_data.hpp"

namespace fpott {

struct DataSection {
  std::string path = "data/ngsim_sample.csv";
  std::size_t k = 2;
  std::size_t horizon = 10;
  std::size_t stride = 2;
  SplitFractions split{0.6, 0.2, 0.2};
  std::size_t max_train = 0;  // balanced caps, 0 = no cap
  std::size_t max_eval = 0;
};

// Defaults are the toy model used for experiments; the module-level defaults
// (d_model 32, 4 heads, 2 layers) stay available through the config.
struct ModelSection {
  std::size_t d_model = 16;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t d_ff = 32;
  std::size_t max_len = kDefaultMaxLen;
  double learning_rate = 3e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;  // centralized training (compare-prompts)
};

struct PromptSection {
  std::string preset = "default";
  std::string template_path;  // overrides preset when set
  bool optimize = false;
  std::size_t max_iters = 50;
  std::size_t sample_train = 150;
  std::size_t sample_val = 90;
  std::size_t score_epochs = 3;
};

struct GeneratorSection {
  GenerationConfig gen;
  std::size_t m = 10;
  bool use_reference = true;  // sample scenes from, and train on, data.path
  std::string checkpoint;     // load instead of training when set
  GeneratorDims dims{16, 2, 1, 32};
  std::size_t train_epochs = 20;
  std::size_t max_windows = 2000;
  double learning_rate = 3e-3;
};

struct EvaluateSection {
  std::string checkpoint;  // default: <output_dir>/model.bin
  std::string dataset = "test";  // train | val | test | path to a CSV
  std::string template_path;     // default: the template saved with the model
};

struct CompareSection {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> presets = {"default", "low", "high"};
};

struct ValidateSection {
  std::string input;  // default: data.path
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DataSection data;
  ModelSection model;
  PromptSection prompt;
  RoundConfig federated;
  GeneratorSection generator;
  EvaluateSection evaluate;
  CompareSection compare;
  ValidateSection validate;

  // Relative paths in the config resolve against this directory.
  std::filesystem::path base_dir = ".";
  std::filesystem::path resolve(const std::string& p) const;
  std::filesystem::path output_path(const std::string& name) const;

  PredictorConfig predictor_config() const;
};

// Throws "ConfigError" on malformed JSON, unknown keys, wrong types or values
// that fail validation.
RunConfig parse_config(std::string_view json_text, std::filesystem::path base_dir = ".");
RunConfig load_config(const std::string& path);
RunConfig default_config();
// Canonical JSON of every field (base_dir excluded).
std::string config_to_json(const RunConfig& cfg);

}  // namespace fpott
