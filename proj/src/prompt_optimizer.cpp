#include "fpott/prompt_optimizer.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "fpott/error.hpp"
#include "fpott/rng.hpp"

namespace fpott {

double feedback_score(const EvalFeedback& fb) {
  return fb.accuracy - kLossPenalty * fb.validation_loss;
}

EvalFeedback score_template(const PromptTemplate& tpl, std::span<const Window> train_sample,
                            std::span<const Window> val_sample, const ScoreOptions& options,
                            std::uint64_t seed) {
  if (train_sample.empty() || val_sample.empty()) {
    throw Error("EmptySample", "training and validation samples must be non-empty");
  }
  const auto train = render_all(train_sample, tpl);
  const auto val = render_all(val_sample, tpl);

  PredictorConfig pc = options.model;
  pc.seed = seed;
  pc.max_len = std::min(options.model.max_len,
                        std::max(longest_prompt(train), longest_prompt(val)) + 1);
  auto model = make_predictor(pc);
  train_local(model, train, options.train, seed);
  const auto result = evaluate(model, val);

  EvalFeedback fb;
  fb.accuracy = result.metrics.accuracy;
  fb.recall_macro = result.metrics.recall_macro;
  fb.precision_macro = result.metrics.precision_macro;
  fb.f1_macro = result.metrics.f1_macro;
  fb.validation_loss = result.mean_loss;
  return fb;
}

OptState optimize(const PromptTemplate& initial, std::span<const Window> train_sample,
                  std::span<const Window> val_sample, const OptimizerConfig& cfg) {
  if (cfg.max_iters > kMaxOptimizerIterations) {
    throw Error("BadConfig", "max_iters must be <= " + std::to_string(kMaxOptimizerIterations));
  }
  initial.validate();
  const std::uint64_t train_seed = derive_seed(cfg.seed, 0x5c0e);
  std::map<std::string, EvalFeedback> memo;
  auto score_of = [&](const PromptTemplate& tpl) {
    const auto key = serialize_template(tpl);
    auto it = memo.find(key);
    if (it == memo.end()) {
      it = memo.emplace(key, score_template(tpl, train_sample, val_sample, cfg.scoring,
                                            train_seed))
               .first;
    }
    return it->second;
  };

  OptState state;
  state.rng_seed = cfg.seed;
  state.incumbent = initial;
  const auto first = score_of(initial);
  state.incumbent_score = feedback_score(first);
  state.history.push_back({0, initial, first, state.incumbent_score, true, state.incumbent_score});

  Rng rng(derive_seed(cfg.seed, 0x3a7e));
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    const auto m = mutate(state.incumbent, rng, cfg.space);
    const auto fb = score_of(m.result);
    const double s = feedback_score(fb);
    const bool accept = m.changed && s > state.incumbent_score;
    if (accept) {
      state.incumbent = m.result;
      state.incumbent_score = s;
    }
    state.iteration = it;
    state.history.push_back({it, m.result, fb, s, accept, state.incumbent_score});
  }
  return state;
}

std::string history_csv(const OptState& state) {
  std::ostringstream out;
  out << kHistoryCsvHeader << '\n';
  for (const auto& h : state.history) {
    auto tpl = serialize_template(h.tpl);
    if (!tpl.empty() && tpl.back() == '\n') tpl.pop_back();
    std::replace(tpl.begin(), tpl.end(), '\n', ';');
    out << h.iteration << ',' << format_fixed(h.score, 6) << ','
        << format_fixed(h.feedback.accuracy, 6) << ',' << format_fixed(h.feedback.validation_loss, 6)
        << ',' << (h.accepted ? 1 : 0) << ',' << format_fixed(h.incumbent_score, 6) << ",\"" << tpl
        << "\"\n";
  }
  return out.str();
}

}  // namespace fpott
