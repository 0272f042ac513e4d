#include "fpott/predictor.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

#include "fpott/error.hpp"
#include "fpott/rng.hpp"

namespace fpott {

namespace {

Tensor as_input(const TokenSequence& ids) {
  Tensor t({ids.size()});
  for (std::size_t i = 0; i < ids.size(); ++i) t[i] = ids[i];
  return t;
}

std::vector<double> logits_of(const PredictorModel& m, const Tensor& input) {
  const auto out = encoder_forward(m.cfg, m.params, input).output;
  return {out.values().begin(), out.values().end()};
}

std::array<double, kNumManeuvers> softmax3(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::array<double, kNumManeuvers> p{};
  double sum = 0.0;
  for (int i = 0; i < kNumManeuvers; ++i) {
    p[i] = std::exp(z[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::size_t argmax(std::span<const double> z) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] > z[best]) best = i;
  }
  return best;
}

}  // namespace

TokenSequence tokenize(std::string_view text, std::size_t max_len) {
  if (max_len < 2) throw Error("BadArgument", "max_len must be >= 2");
  const std::size_t keep = std::min(text.size(), max_len - 1);
  TokenSequence ids;
  ids.reserve(max_len);
  ids.push_back(kBeginToken);
  for (std::size_t i = text.size() - keep; i < text.size(); ++i) {
    ids.push_back(static_cast<unsigned char>(text[i]));
  }
  ids.resize(max_len, kPadToken);
  return ids;
}

std::string detokenize(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && id < 256) out += static_cast<char>(id);
  }
  return out;
}

EncoderConfig encoder_config(const PredictorConfig& cfg) {
  EncoderConfig e;
  e.d_model = cfg.d_model;
  e.n_heads = cfg.n_heads;
  e.n_layers = cfg.n_layers;
  e.d_ff = cfg.d_ff;
  e.k_context = cfg.max_len;
  e.input = TokenEmbedding{kTokenVocab};
  e.head = Classifier{kNumManeuvers};
  e.seed = cfg.seed;
  return e;
}

PredictorModel make_predictor(const PredictorConfig& cfg) {
  const auto e = encoder_config(cfg);
  return {e, init_parameters(e)};
}

PredictorModel zero_predictor(const PredictorConfig& cfg) {
  const auto e = encoder_config(cfg);
  return {e, zero_parameters(e)};
}

Prediction predict(const PredictorModel& model, std::string_view prompt) {
  const auto z = logits_of(model, as_input(tokenize(prompt, model.cfg.k_context)));
  Prediction p;
  p.probabilities = softmax3(z);
  p.label = static_cast<ManeuverLabel>(argmax(z));
  return p;
}

std::vector<LabeledPrompt> render_all(std::span<const Window> windows, const PromptTemplate& tpl) {
  std::vector<LabeledPrompt> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back({render_prompt(w, tpl), w.label});
  return out;
}

std::size_t longest_prompt(std::span<const LabeledPrompt> pairs) {
  std::size_t n = 0;
  for (const auto& p : pairs) n = std::max(n, p.text.size());
  return n;
}

TrainResult train_local(PredictorModel& model, std::span<const LabeledPrompt> shard,
                        const TrainOptions& options, std::uint64_t seed) {
  if (shard.empty()) throw Error("EmptyShard", "no training examples");
  if (options.batch_size < 1) throw Error("BadConfig", "batch_size must be >= 1");
  TrainResult result;
  if (options.epochs == 0) return result;

  std::vector<Tensor> inputs;
  inputs.reserve(shard.size());
  for (const auto& ex : shard) inputs.push_back(as_input(tokenize(ex.text, model.cfg.k_context)));

  OptimizerState opt(options.optimizer);
  Rng rng(seed);
  std::vector<std::size_t> order(shard.size());
  const std::size_t n_params = model.params.size();
  std::vector<std::vector<double>> per_example(options.batch_size,
                                               std::vector<double>(n_params));
  std::vector<double> per_loss(options.batch_size);
  std::vector<double> grad(n_params);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t b = std::min(options.batch_size, order.size() - start);
      const auto bi = static_cast<std::ptrdiff_t>(b);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t jj = 0; jj < bi; ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        const std::size_t ex = order[start + j];
        auto fwd = encoder_forward(model.cfg, model.params, inputs[ex]);
        const auto lv =
            cross_entropy(fwd.output.values(), static_cast<std::size_t>(shard[ex].label));
        per_loss[j] = lv.value;
        auto g = ParameterSet::unflatten(model.params.layout_ptr(),
                                         std::vector<double>(n_params, 0.0));
        encoder_backward(fwd.cache, model.params, lv.grad, g);
        std::copy(g.values().begin(), g.values().end(), per_example[j].begin());
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t j = 0; j < b; ++j) {
        for (std::size_t p = 0; p < n_params; ++p) grad[p] += per_example[j][p];
        epoch_loss += per_loss[j];
      }
      const double inv = 1.0 / static_cast<double>(b);
      for (auto& g : grad) g *= inv;
      optimizer_step(opt, model.params.values(), grad);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  result.final_loss = result.epoch_losses.back();
  return result;
}

EvalResult evaluate(const PredictorModel& model, std::span<const LabeledPrompt> pairs) {
  if (pairs.empty()) throw Error("EmptyInput", "no evaluation pairs");
  EvalResult r;
  r.truths.resize(pairs.size());
  r.predictions.resize(pairs.size());
  std::vector<double> losses(pairs.size());
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto z = logits_of(model, as_input(tokenize(pairs[i].text, model.cfg.k_context)));
    r.truths[i] = static_cast<std::size_t>(pairs[i].label);
    r.predictions[i] = argmax(z);
    losses[i] = cross_entropy(z, r.truths[i]).value;
  }
  for (double l : losses) r.mean_loss += l;
  r.mean_loss /= static_cast<double>(pairs.size());
  r.metrics = report(confusion(r.truths, r.predictions, kNumManeuvers));
  return r;
}

}  // namespace fpott
