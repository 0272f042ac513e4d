#include <map>

#include "doctest.h"
#include "fpott/prompt_optimizer.hpp"
#include "test_util.hpp"

using namespace fpott;

namespace {

OptimizerConfig tiny_config(std::size_t iters, std::uint64_t seed) {
  OptimizerConfig cfg;
  cfg.max_iters = iters;
  cfg.seed = seed;
  cfg.space.max_context = 2;
  cfg.scoring.model.d_model = 8;
  cfg.scoring.model.n_heads = 2;
  cfg.scoring.model.n_layers = 1;
  cfg.scoring.model.d_ff = 16;
  cfg.scoring.train.epochs = 2;
  cfg.scoring.train.batch_size = 8;
  cfg.scoring.train.optimizer = Adam{5e-3};
  return cfg;
}

}  // namespace

TEST_CASE("feedback score") {
  EvalFeedback fb;
  fb.accuracy = 0.75;
  fb.validation_loss = 0.5;
  CHECK(feedback_score(fb) == doctest::Approx(0.745).epsilon(1e-15));
}

TEST_CASE("score_template is deterministic and rejects empty samples") {
  const auto train = toy_windows(24, 1);
  const auto val = toy_windows(12, 2);
  const auto cfg = tiny_config(0, 3);
  const PromptTemplate tpl;
  const auto a = score_template(tpl, train, val, cfg.scoring, 9);
  const auto b = score_template(tpl, train, val, cfg.scoring, 9);
  CHECK(a == b);
  CHECK(a.accuracy >= 0.0);
  CHECK(a.accuracy <= 1.0);
  CHECK(a.validation_loss > 0.0);
  const std::vector<Window> none;
  CHECK(error_name([&] { score_template(tpl, none, val, cfg.scoring, 9); }) == "EmptySample");
  CHECK(error_name([&] { score_template(tpl, train, none, cfg.scoring, 9); }) == "EmptySample");
}

TEST_CASE("zero iterations returns the initial template") {
  const auto train = toy_windows(24, 1);
  const auto val = toy_windows(12, 2);
  const PromptTemplate tpl;
  const auto st = optimize(tpl, train, val, tiny_config(0, 3));
  CHECK(st.incumbent == tpl);
  REQUIRE(st.history.size() == 1);
  CHECK(st.history[0].iteration == 0);
  CHECK(st.history[0].accepted);
  CHECK(st.incumbent_score == st.history[0].score);
}

TEST_CASE("iteration cap") {
  const auto train = toy_windows(6, 1);
  const PromptTemplate tpl;
  CHECK(error_name([&] { optimize(tpl, train, train, tiny_config(51, 0)); }) == "BadConfig");
  const std::vector<Window> none;
  CHECK(error_name([&] { optimize(tpl, none, train, tiny_config(1, 0)); }) == "EmptySample");
}

TEST_CASE("hill climb trace is monotone, memoized and reproducible") {
  const auto train = toy_windows(30, 4);
  const auto val = toy_windows(15, 5);
  const PromptTemplate tpl;
  const auto cfg = tiny_config(8, 11);
  const auto st = optimize(tpl, train, val, cfg);
  REQUIRE(st.history.size() == 9);
  CHECK(st.iteration == 8);

  std::map<std::string, double> seen;
  double best = st.history[0].score;
  for (std::size_t i = 1; i < st.history.size(); ++i) {
    const auto& h = st.history[i];
    CHECK(h.iteration == i);
    CHECK(h.accepted == (h.score > best));
    if (h.accepted) best = h.score;
    CHECK(h.incumbent_score == best);
    CHECK(h.incumbent_score >= st.history[i - 1].incumbent_score);
    const auto key = serialize_template(h.tpl);
    if (seen.count(key)) CHECK(seen[key] == h.score);
    seen[key] = h.score;
  }
  CHECK(st.incumbent_score == best);

  const auto again = optimize(tpl, train, val, cfg);
  CHECK(history_csv(again) == history_csv(st));
  CHECK(again.incumbent == st.incumbent);
}

TEST_CASE("history csv layout") {
  const auto train = toy_windows(12, 6);
  const auto st = optimize(PromptTemplate{}, train, train, tiny_config(2, 1));
  const auto csv = history_csv(st);
  CHECK(csv.rfind(std::string(kHistoryCsvHeader) + "\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("\"fields=") != std::string::npos);
}
