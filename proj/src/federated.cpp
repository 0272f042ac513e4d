#include "fpott/federated.hpp"

#include <algorithm>
#include <sstream>

#include "fpott/error.hpp"

namespace fpott {

namespace {

thread_local int training_depth = 0;

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error("AlphaOutOfRange", "alpha must be in [0, 1], got " + format_fixed(alpha, 6));
  }
}

}  // namespace

void RoundConfig::validate() const {
  check_alpha(alpha);
  if (n_clients < 1) throw Error("BadConfig", "n_clients must be >= 1");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) {
    throw Error("BadConfig", "dropout_prob must be in [0, 1)");
  }
  if (batch_size < 1) throw Error("BadConfig", "batch_size must be >= 1");
}

ParameterSet aggregate(std::span<const ParameterSet> updates) {
  if (updates.empty()) throw Error("EmptyUpdateSet", "nothing to aggregate");
  for (const auto& u : updates) {
    if (!u.compatible_with(updates[0])) {
      throw Error("ShapeMismatch", "updates have different parameter layouts");
    }
  }
  std::vector<double> sum = updates[0].flatten();
  std::vector<char> uniform(sum.size(), 1);
  for (std::size_t i = 1; i < updates.size(); ++i) {
    const auto v = updates[i].values();
    for (std::size_t p = 0; p < sum.size(); ++p) {
      uniform[p] &= static_cast<char>(v[p] == updates[0].values()[p]);
      sum[p] += v[p];
    }
  }
  // Coordinates where every client agrees are returned as-is, so the mean of
  // identical updates is exact.
  const auto n = static_cast<double>(updates.size());
  const auto first = updates[0].values();
  for (std::size_t p = 0; p < sum.size(); ++p) sum[p] = uniform[p] ? first[p] : sum[p] / n;
  return ParameterSet::unflatten(updates[0].layout_ptr(), std::move(sum));
}

ParameterSet synchronize(const ParameterSet& edge, const ParameterSet& cloud, double alpha) {
  check_alpha(alpha);
  if (!edge.compatible_with(cloud)) {
    throw Error("ShapeMismatch", "edge and cloud parameter layouts differ");
  }
  std::vector<double> out(edge.size());
  const auto e = edge.values();
  const auto c = cloud.values();
  // e + α(c − e) keeps synchronize(x, x, α) == x; the endpoints are exact.
  for (std::size_t p = 0; p < out.size(); ++p) {
    out[p] = alpha == 1.0 ? c[p] : alpha == 0.0 ? e[p] : e[p] + alpha * (c[p] - e[p]);
  }
  return ParameterSet::unflatten(edge.layout_ptr(), std::move(out));
}

std::vector<std::uint8_t> encode_message(std::size_t round, std::size_t client_id,
                                         const ParameterSet& params) {
  const auto payload = serialize_parameters(params);
  std::vector<std::uint8_t> out;
  out.reserve(24 + payload.size());
  put_u64_le(out, round);
  put_u64_le(out, client_id);
  put_u64_le(out, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

DecodedMessage decode_message(std::span<const std::uint8_t> bytes,
                              std::shared_ptr<const ParameterLayout> layout) {
  if (bytes.size() < 24) throw Error("MalformedPayload", "message shorter than its header");
  DecodedMessage m;
  m.round = get_u64_le(bytes, 0);
  m.client_id = get_u64_le(bytes, 8);
  const std::uint64_t len = get_u64_le(bytes, 16);
  if (len != bytes.size() - 24) throw Error("MalformedPayload", "payload length mismatch");
  m.params = deserialize_parameters(bytes.subspan(24), std::move(layout));
  return m;
}

std::uint64_t client_round_seed(std::uint64_t master_seed, std::size_t round,
                                std::size_t client_id) {
  return derive_seed(master_seed, 0x10ca1 + round, client_id);
}

std::vector<std::size_t> sample_participants(const RoundConfig& cfg, std::size_t round) {
  Rng rng(derive_seed(cfg.master_seed, 0xd209, round));
  std::vector<std::size_t> out;
  while (out.empty()) {
    for (std::size_t id = 1; id <= cfg.n_clients; ++id) {
      if (!rng.bernoulli(cfg.dropout_prob)) out.push_back(id);
    }
  }
  return out;
}

RoundRecord run_round(CloudState& cloud, std::vector<EdgeState>& edges, const RoundConfig& cfg,
                      const ClientTrainer& trainer) {
  cfg.validate();
  if (edges.size() != cfg.n_clients) throw Error("BadConfig", "edge count differs from n_clients");
  for (const auto& e : edges) {
    if (!e.params.compatible_with(cloud.params)) {
      throw Error("ShapeMismatch", "edge " + std::to_string(e.client_id) +
                                       " does not match the cloud model");
    }
  }
  const std::size_t round = cloud.round + 1;
  RoundRecord rec;
  rec.round = round;
  rec.participants = sample_participants(cfg, round);

  // Work on copies so a failing client leaves every state untouched.
  std::vector<ParameterSet> trained;
  trained.reserve(rec.participants.size());
  for (const std::size_t id : rec.participants) {
    const auto& edge = edges[id - 1];
    const auto down = encode_message(round, id, cloud.params);
    rec.bytes_down += down.size();
    auto params = synchronize(edge.params, decode_message(down, edge.params.layout_ptr()).params,
                              cfg.alpha);
    std::optional<double> acc;
    if (cfg.local_epochs > 0) {
      acc = trainer(id, params, cfg.local_epochs, client_round_seed(cfg.master_seed, round, id));
    }
    rec.client_accuracy.push_back(acc);
    trained.push_back(std::move(params));
  }

  std::vector<ParameterSet> received;
  received.reserve(trained.size());
  for (std::size_t i = 0; i < trained.size(); ++i) {
    const auto up = encode_message(round, rec.participants[i], trained[i]);
    rec.bytes_up += up.size();
    received.push_back(decode_message(up, cloud.params.layout_ptr()).params);
  }
  auto next_cloud = aggregate(received);

  for (std::size_t i = 0; i < trained.size(); ++i) {
    edges[rec.participants[i] - 1].params = std::move(trained[i]);
  }
  cloud.params = std::move(next_cloud);
  cloud.round = round;
  return rec;
}

std::vector<LabeledPrompt> AccessCountingShard::read_all() const {
  reads_ += data_.size();
  if (training_depth == 0) stray_reads_ += data_.size();
  return data_;
}

AccessCountingShard::TrainingScope::TrainingScope() { ++training_depth; }
AccessCountingShard::TrainingScope::~TrainingScope() { --training_depth; }

FederatedRun run_training(const FederatedOptions& options,
                          std::span<const AccessCountingShard> shards,
                          std::span<const LabeledPrompt> val) {
  const RoundConfig& cfg = options.round;
  cfg.validate();
  if (shards.size() != cfg.n_clients) {
    throw Error("BadConfig", "expected " + std::to_string(cfg.n_clients) + " shards, got " +
                                 std::to_string(shards.size()));
  }
  for (std::size_t i = 0; i < shards.size(); ++i) {
    if (shards[i].empty()) throw Error("EmptyShard", "client " + std::to_string(i + 1));
  }

  PredictorConfig pc = options.model;
  pc.seed = cfg.master_seed;
  const auto init = make_predictor(pc);

  FederatedRun run;
  run.cloud.params = init.params;
  run.cloud.config_fingerprint = init.params.fingerprint();
  for (std::size_t id = 1; id <= cfg.n_clients; ++id) run.edges.push_back({id, init.params});

  auto evaluate_into = [&](RoundRecord& rec) {
    if (val.empty()) return;
    const PredictorModel m{init.cfg, run.cloud.params};
    const auto r = evaluate(m, val);
    rec.aggregate_metrics = r.metrics;
    rec.aggregate_loss = r.mean_loss;
  };

  ClientTrainer trainer = [&](std::size_t id, ParameterSet& params, std::size_t epochs,
                              std::uint64_t seed) -> std::optional<double> {
    AccessCountingShard::TrainingScope scope;
    const auto shard = shards[id - 1].read_all();
    PredictorModel m{init.cfg, params};
    TrainOptions to;
    to.epochs = epochs;
    to.batch_size = cfg.batch_size;
    to.optimizer = options.optimizer;
    train_local(m, shard, to, seed);
    params = std::move(m.params);
    if (!options.evaluate_clients || val.empty()) return std::nullopt;
    return evaluate(PredictorModel{init.cfg, params}, val).metrics.accuracy;
  };

  RoundRecord initial;
  evaluate_into(initial);
  run.history.push_back(initial);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    auto rec = run_round(run.cloud, run.edges, cfg, trainer);
    evaluate_into(rec);
    run.history.push_back(std::move(rec));
  }
  return run;
}

std::string round_history_csv(std::span<const RoundRecord> history) {
  std::ostringstream out;
  out << kRoundCsvHeader << '\n';
  for (const auto& r : history) {
    out << r.round << ',';
    for (std::size_t i = 0; i < r.participants.size(); ++i) {
      out << (i ? ";" : "") << r.participants[i];
    }
    if (r.aggregate_metrics) {
      const auto& m = *r.aggregate_metrics;
      out << ',' << format_fixed(m.accuracy, 4) << ',' << format_fixed(m.precision_macro, 4) << ','
          << format_fixed(m.recall_macro, 4) << ',' << format_fixed(m.f1_macro, 4) << ','
          << format_fixed(r.aggregate_loss, 4);
    } else {
      out << ",,,,,";
    }
    out << ',';
    for (std::size_t i = 0; i < r.client_accuracy.size(); ++i) {
      out << (i ? ";" : "");
      if (r.client_accuracy[i]) out << format_fixed(*r.client_accuracy[i], 4);
    }
    out << ',' << r.bytes_down << ',' << r.bytes_up << '\n';
  }
  return out.str();
}

}  // namespace fpott
