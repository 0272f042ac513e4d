#pragma once

// Dual-layer federated rounds: edge clients blend in the cloud model, train
// locally on their own shard, and the cloud averages what comes back. The
// round engine only ever handles serialized parameter messages; training is
// an opaque per-client callback.

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpott/encoder.hpp"
#include "fpott/metrics.hpp"
#include "fpott/predictor.hpp"
#include "fpott/rng.hpp"

namespace fpott {

struct RoundConfig {
  std::size_t n_clients = 4;
  double alpha = 0.5;
  std::size_t local_epochs = 1;
  std::size_t rounds = 20;
  double dropout_prob = 0.0;
  std::size_t batch_size = 16;
  std::uint64_t master_seed = 0;

  // Throws "AlphaOutOfRange" or "BadConfig".
  void validate() const;
};

// Unweighted coordinate-wise mean, summed as a left fold in the given order
// and divided by the count. Throws "EmptyUpdateSet" or "ShapeMismatch".
ParameterSet aggregate(std::span<const ParameterSet> updates);

// alpha * cloud + (1 - alpha) * edge. Throws "ShapeMismatch" or
// "AlphaOutOfRange".
ParameterSet synchronize(const ParameterSet& edge, const ParameterSet& cloud, double alpha);

struct CloudState {
  ParameterSet params;
  std::size_t round = 0;
  std::uint64_t config_fingerprint = 0;
};

struct EdgeState {
  std::size_t client_id = 0;  // 1-based
  ParameterSet params;
};

// Wire message: u64 round, u64 client_id, u64 payload length, then the
// serialized parameter payload. All integers little-endian.
std::vector<std::uint8_t> encode_message(std::size_t round, std::size_t client_id,
                                         const ParameterSet& params);

struct DecodedMessage {
  std::size_t round = 0;
  std::size_t client_id = 0;
  ParameterSet params;
};

// Throws "MalformedPayload" or "FingerprintMismatch".
DecodedMessage decode_message(std::span<const std::uint8_t> bytes,
                              std::shared_ptr<const ParameterLayout> layout);

// Seed handed to client `client_id`'s local training in round `round`.
std::uint64_t client_round_seed(std::uint64_t master_seed, std::size_t round,
                                std::size_t client_id);

// Clients that take part in a round: independent Bernoulli(1 - dropout_prob)
// draws per client, redrawn until at least one survives. Ascending ids.
std::vector<std::size_t> sample_participants(const RoundConfig& cfg, std::size_t round);

// Local training for one client: updates `params` in place and optionally
// reports the client's post-training validation accuracy.
using ClientTrainer = std::function<std::optional<double>(
    std::size_t client_id, ParameterSet& params, std::size_t epochs, std::uint64_t seed)>;

struct RoundRecord {
  std::size_t round = 0;  // 0 is the evaluation of the initial model
  std::vector<std::size_t> participants;
  std::vector<std::optional<double>> client_accuracy;  // parallel to participants
  std::optional<MetricsReport> aggregate_metrics;
  double aggregate_loss = 0.0;
  std::size_t bytes_down = 0;
  std::size_t bytes_up = 0;
};

// One round: sample participants, send each the cloud model, blend with
// alpha, train for local_epochs, send back, aggregate in ascending client id
// order. Dropped clients keep their parameters. Any exception from a trainer
// leaves cloud and edges untouched.
RoundRecord run_round(CloudState& cloud, std::vector<EdgeState>& edges, const RoundConfig& cfg,
                      const ClientTrainer& trainer);

// Shard wrapper that counts element reads and flags any read made while no
// TrainingScope is open on the calling thread.
class AccessCountingShard {
 public:
  explicit AccessCountingShard(std::vector<LabeledPrompt> data) : data_(std::move(data)) {}
  AccessCountingShard(const AccessCountingShard& other) : data_(other.data_) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  // Copies the whole shard out, counting one read per element.
  std::vector<LabeledPrompt> read_all() const;

  std::size_t reads() const { return reads_.load(); }
  std::size_t reads_outside_training() const { return stray_reads_.load(); }

  // Marks the current thread as doing local training for its lifetime.
  class TrainingScope {
   public:
    TrainingScope();
    ~TrainingScope();
    TrainingScope(const TrainingScope&) = delete;
    TrainingScope& operator=(const TrainingScope&) = delete;
  };

 private:
  std::vector<LabeledPrompt> data_;
  mutable std::atomic<std::size_t> reads_{0};
  mutable std::atomic<std::size_t> stray_reads_{0};
};

struct FederatedRun {
  CloudState cloud;
  std::vector<EdgeState> edges;
  std::vector<RoundRecord> history;  // round 0 (initial model) through R
};

struct FederatedOptions {
  RoundConfig round;
  PredictorConfig model;  // seed is replaced by round.master_seed
  OptimizerAlgorithm optimizer = Adam{2e-3};
  bool evaluate_clients = true;
};

// Initializes the cloud and every edge identically from master_seed, then
// runs R rounds, evaluating the aggregated model on `val` after each (and once
// before the first). Throws "BadConfig" when the shard count differs from
// n_clients, "EmptyShard" for an empty shard.
FederatedRun run_training(const FederatedOptions& options,
                          std::span<const AccessCountingShard> shards,
                          std::span<const LabeledPrompt> val);

inline constexpr std::string_view kRoundCsvHeader =
    "round,participants,accuracy,precision,recall,f1,val_loss,client_accuracy,bytes_down,"
    "bytes_up";

// Lists inside a cell are ';'-separated; missing client accuracies are empty.
std::string round_history_csv(std::span<const RoundRecord> history);

}  // namespace fpott
