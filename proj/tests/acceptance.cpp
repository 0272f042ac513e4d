// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fpott/config.hpp"
#include "fpott/error.hpp"
#include "fpott/federated.hpp"
#include "fpott/gradient_check.hpp"
#include "fpott/metrics.hpp"
#include "fpott/pipeline.hpp"
#include "fpott/prompt_optimizer.hpp"
#include "fpott/rng.hpp"

using namespace fpott;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

RunConfig bundled_config() {
  auto c = default_config();
  c.base_dir = FPOTT_SOURCE_DIR;
  c.output_dir = (fs::temp_directory_path() / "fpott_acceptance").string();
  return c;
}

std::string fixed(double v, int digits = 4) { return format_fixed(v, digits); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------- 1

ParameterSet random_params(const std::shared_ptr<const ParameterLayout>& layout, Rng& rng,
                           bool integers) {
  std::vector<double> v(layout->total_size());
  for (auto& x : v) {
    x = integers ? static_cast<double>(static_cast<int>(rng.index(201)) - 100)
                 : rng.normal(0.0, std::pow(10.0, rng.uniform(-3.0, 3.0)));
  }
  return ParameterSet::unflatten(layout, std::move(v));
}

Outcome federated_algebra() {
  constexpr int kCases = 60;
  EncoderConfig ec;
  ec.d_model = 8;
  ec.n_heads = 2;
  ec.n_layers = 1;
  ec.d_ff = 8;
  ec.input = LinearProjection{3};
  ec.head = Regressor{2};
  const auto layout = make_layout(ec);
  Rng rng(20260101);
  std::size_t failures = 0;
  double worst_rel = 0.0;

  for (int c = 0; c < kCases; ++c) {
    // Identity on equal inputs.
    const auto x = random_params(layout, rng, false);
    const std::vector<ParameterSet> copies(1 + rng.index(8), x);
    failures += !(aggregate(copies) == x);

    // Boundary weights are exact.
    const auto e = random_params(layout, rng, false);
    failures += !(synchronize(e, x, 0.0) == e);
    failures += !(synchronize(e, x, 1.0) == x);

    // Blend fixed point.
    failures += !(synchronize(x, x, rng.uniform()) == x);

    // Canonical order makes the result independent of arrival order.
    const std::size_t n = 2 + rng.index(6);
    std::vector<std::pair<std::size_t, ParameterSet>> updates;
    for (std::size_t id = 1; id <= n; ++id) updates.emplace_back(id, random_params(layout, rng, false));
    auto canonical = [](std::vector<std::pair<std::size_t, ParameterSet>> u) {
      std::sort(u.begin(), u.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<ParameterSet> sets;
      for (auto& [id, p] : u) sets.push_back(p);
      return aggregate(sets);
    };
    const auto reference = canonical(updates);
    rng.shuffle(updates);
    failures += !(canonical(updates) == reference);

    // Mean against an extended-precision oracle; integer inputs are exact.
    for (bool integers : {true, false}) {
      std::vector<ParameterSet> sets;
      for (std::size_t i = 0; i < n; ++i) sets.push_back(random_params(layout, rng, integers));
      const auto got = aggregate(sets);
      for (std::size_t p = 0; p < layout->total_size(); ++p) {
        long double sum = 0.0L;
        for (const auto& s : sets) sum += s.values()[p];
        const double expect = static_cast<double>(sum / static_cast<long double>(n));
        if (integers) {
          failures += got.values()[p] != expect;
        } else {
          const double rel = std::abs(got.values()[p] - expect) /
                             std::max(std::abs(expect), std::numeric_limits<double>::min());
          worst_rel = std::max(worst_rel, rel);
          failures += rel > 1e-12;
        }
      }
    }
  }
  std::ostringstream d;
  d << kCases << " cases per identity, " << failures << " failures, worst relative error "
    << worst_rel;
  return {failures == 0, d.str()};
}

// ---------------------------------------------------------------- 2

Outcome single_client_equivalence() {
  auto cfg = bundled_config();
  const auto data = read_ngsim_csv(cfg.resolve(cfg.data.path).string());
  const auto windows = prepare_windows(data, cfg, cfg.seed);
  const auto prompts = render_all(windows.train, preset_template(ComplexityPreset::Default, cfg.data.k));
  const auto val = render_all(windows.val, preset_template(ComplexityPreset::Default, cfg.data.k));

  FederatedOptions fo;
  fo.round = cfg.federated;
  fo.round.n_clients = 1;
  fo.round.alpha = 1.0;
  fo.round.dropout_prob = 0.0;
  fo.round.rounds = 5;
  fo.model = cfg.predictor_config();
  fo.model.max_len = std::min(cfg.model.max_len,
                              std::max(longest_prompt(prompts), longest_prompt(val)) + 1);
  fo.optimizer = Adam{cfg.model.learning_rate};
  fo.evaluate_clients = false;
  const std::vector<AccessCountingShard> shard = {AccessCountingShard(prompts)};
  const auto run = run_training(fo, shard, val);

  PredictorConfig pc = fo.model;
  pc.seed = fo.round.master_seed;
  auto plain = make_predictor(pc);
  TrainOptions to;
  to.epochs = fo.round.local_epochs;
  to.batch_size = fo.round.batch_size;
  to.optimizer = fo.optimizer;
  for (std::size_t r = 1; r <= fo.round.rounds; ++r) {
    train_local(plain, prompts, to, client_round_seed(fo.round.master_seed, r, 1));
  }
  std::size_t differing = 0;
  for (std::size_t i = 0; i < plain.params.size(); ++i) {
    differing += plain.params.values()[i] != run.cloud.params.values()[i];
  }
  return {differing == 0 && run.cloud.round == 5,
          std::to_string(prompts.size()) + " training prompts, " +
              std::to_string(plain.params.size()) + " parameters, " + std::to_string(differing) +
              " differ"};
}

// ---------------------------------------------------------------- 3

Outcome gradient_verification() {
  double worst = 0.0;
  std::string worst_tensor;
  std::size_t checks = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (bool classifier : {true, false}) {
      EncoderConfig cfg;
      cfg.d_model = 8;
      cfg.n_heads = 2;
      cfg.n_layers = 2;
      cfg.d_ff = 16;
      cfg.k_context = 6;
      cfg.seed = seed;
      cfg.input = TokenEmbedding{kTokenVocab};
      cfg.head = classifier ? HeadMode{Classifier{3}} : HeadMode{Regressor{4}};
      Rng rng(derive_seed(seed, 0x9c));
      Tensor x({cfg.k_context});
      for (auto& v : x.values()) v = static_cast<double>(rng.index(kTokenVocab));
      LossTarget target = std::size_t{rng.index(3)};
      if (!classifier) target = std::vector<double>{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
      GradientCheckOptions opt;
      opt.seed = seed;
      const auto r = gradient_check(cfg, init_parameters(cfg), x, target, opt);
      if (r.max_relative_error > worst) {
        worst = r.max_relative_error;
        worst_tensor = r.worst_tensor;
      }
      ++checks;
    }
  }
  std::ostringstream d;
  d << checks << " checks (20 seeds x 2 heads, 2 layers), max relative error " << worst << " (" << worst_tensor
    << ")";
  return {worst < 1e-4, d.str()};
}

// ---------------------------------------------------------------- 4

Outcome generator_validity() {
  auto base = bundled_config();
  const fs::path root = fs::path(base.output_dir) / "generate";
  fs::remove_all(root);
  std::size_t bad = 0;
  std::string first_problem;
  std::string checkpoint;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    auto cfg = base;
    cfg.seed = s;
    cfg.generator.gen.seed = s;
    cfg.generator.m = 1 + (s * 7) % 10;
    const std::size_t Ts[] = {cfg.generator.gen.k + 1, 60, 120, 200, 300};
    cfg.generator.gen.T = Ts[s % 5];
    cfg.output_dir = (root / std::to_string(s)).string();
    cfg.generator.checkpoint = checkpoint;
    std::ostringstream out, err;
    const int code = cmd_generate(cfg, out, err);
    if (checkpoint.empty()) checkpoint = cfg.output_path("generator.bin").string();

    auto fail = [&](const std::string& why) {
      ++bad;
      if (first_problem.empty()) first_problem = "seed " + std::to_string(s) + ": " + why;
    };
    if (code != kExitOk) {
      fail("exit " + std::to_string(code) + " " + err.str());
      continue;
    }
    const auto text = slurp(cfg.output_path("synthetic.csv"));
    const auto ds = parse_ngsim_csv(text);
    if (write_ngsim_csv(ds) != text || !(parse_ngsim_csv(write_ngsim_csv(ds)) == ds)) {
      fail("CSV round trip");
    }
    if (ds.trajectories.size() != cfg.generator.m) fail("vehicle count");
    for (const auto& t : ds.trajectories) {
      if (t.states.size() != cfg.generator.gen.T) fail("trajectory length");
      for (const auto& st : t.states) {
        if (!(st.velocity >= 0.0 && st.velocity <= cfg.generator.gen.v_max)) fail("velocity range");
      }
    }
    if (!check_collisions(ds, cfg.generator.gen.min_gap).empty()) fail("collisions");
    if (kinematic_residual(ds) != 0.0) fail("kinematic residual");
    if (slurp(cfg.output_path("validation_report.txt")).rfind("status: clean", 0) != 0) {
      fail("report not clean");
    }
  }
  return {bad == 0, "20 configs (m 1..10, T up to 300), " + std::to_string(bad) + " problems" +
                        (first_problem.empty() ? "" : ", first: " + first_problem)};
}

// ---------------------------------------------------------------- 5

Outcome optimizer_contracts() {
  auto cfg = bundled_config();
  const auto data = read_ngsim_csv(cfg.resolve(cfg.data.path).string());
  const auto windows = prepare_windows(data, cfg, cfg.seed);
  const auto train = balance_classes(windows.train, 60, 11);
  const auto val = balance_classes(windows.val, 30, 12);

  std::size_t violations = 0;
  std::size_t accepted = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    OptimizerConfig oc;
    oc.max_iters = kMaxOptimizerIterations;
    oc.seed = seed;
    oc.space.max_context = cfg.data.k;
    oc.scoring.model = cfg.predictor_config();
    oc.scoring.model.d_model = 8;
    oc.scoring.model.d_ff = 16;
    oc.scoring.train.epochs = 2;
    oc.scoring.train.batch_size = cfg.model.batch_size;
    oc.scoring.train.optimizer = Adam{cfg.model.learning_rate};
    const auto initial = preset_template(ComplexityPreset::Default, cfg.data.k);
    const auto a = optimize(initial, train, val, oc);
    const auto b = optimize(initial, train, val, oc);
    violations += history_csv(a) != history_csv(b);
    violations += a.iteration > kMaxOptimizerIterations;
    violations += a.history.size() != kMaxOptimizerIterations + 1;
    double best = a.history.front().score;
    for (std::size_t i = 1; i < a.history.size(); ++i) {
      const auto& h = a.history[i];
      violations += h.incumbent_score < a.history[i - 1].incumbent_score;
      violations += h.accepted != (h.score > best);
      if (h.accepted) {
        best = h.score;
        ++accepted;
      }
    }
    violations += a.incumbent_score != best;
    oc.max_iters = kMaxOptimizerIterations + 1;
    try {
      optimize(initial, train, val, oc);
      ++violations;
    } catch (const fpott::Error& e) {
      violations += e.name() != "BadConfig";
    }
  }
  return {violations == 0, "10 seeds x 50 iterations, twice each; " + std::to_string(accepted) +
                               " accepted moves, " + std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------- 6

Outcome preset_ordering() {
  auto cfg = bundled_config();
  cfg.output_dir = (fs::path(cfg.output_dir) / "compare").string();
  const auto r = run_compare_prompts(cfg);
  std::ostringstream d;
  d << "mean val accuracy over " << cfg.compare.seeds.size() << " seeds:";
  for (const auto& p : r.presets) d << ' ' << p.preset << ' ' << fixed(p.mean.accuracy);
  d << ", high - default " << fixed(r.margin);
  return {r.ordering_holds && r.margin >= 0.02 && cfg.compare.seeds.size() >= 5, d.str()};
}

// ---------------------------------------------------------------- 7 and 9

std::optional<TrainOutcome> default_training;

const TrainOutcome& default_run() {
  if (!default_training) {
    auto cfg = bundled_config();
    cfg.output_dir = (fs::path(cfg.output_dir) / "train").string();
    default_training = run_train(cfg);
  }
  return *default_training;
}

Outcome learning_progress() {
  const auto& o = default_run();
  const auto& h = o.run.history;
  const double first = h.front().aggregate_metrics->accuracy;
  const double last = h.back().aggregate_metrics->accuracy;
  const double prior = 1.0 / 3.0;
  return {last >= first + 0.10 && last >= prior + 0.10,
          "N=" + std::to_string(o.run.edges.size()) + ", R=" + std::to_string(h.size() - 1) +
              ": round 0 accuracy " + fixed(first) + ", final " + fixed(last) +
              ", needed " + fixed(std::max(first, prior) + 0.10)};
}

Outcome privacy_check() {
  const auto& o = default_run();
  std::size_t reads = 0, stray = 0;
  for (auto r : o.shard_reads) reads += r;
  for (auto r : o.stray_shard_reads) stray += r;
  // The counter itself must be able to see a stray read.
  AccessCountingShard probe(std::vector<LabeledPrompt>{{"x", ManeuverLabel::LaneKeep}});
  (void)probe.read_all();
  const bool counter_works = probe.reads_outside_training() == 1;
  return {stray == 0 && reads > 0 && counter_works,
          std::to_string(reads) + " shard reads inside local training, " + std::to_string(stray) +
              " outside; probe read detected: " + (counter_works ? "yes" : "no")};
}

// ---------------------------------------------------------------- 8

Outcome metrics_oracle() {
  Rng rng(808);
  double worst = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t k = 2 + rng.index(4);
    const std::size_t n = 1 + rng.index(60);
    std::vector<std::size_t> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.index(k);
      p[i] = rng.bernoulli(0.6) ? t[i] : rng.index(k);
    }
    const auto r = report(confusion(t, p, k));
    double correct = 0, ps = 0, rs = 0, fs_ = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += t[i] == c && p[i] == c;
        fp += t[i] != c && p[i] == c;
        fn += t[i] == c && p[i] != c;
      }
      correct += tp;
      const double pr = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double re = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      ps += pr;
      rs += re;
      fs_ += pr + re > 0 ? 2 * pr * re / (pr + re) : 0.0;
    }
    const double kk = static_cast<double>(k);
    for (double diff : {r.accuracy - correct / static_cast<double>(n), r.precision_macro - ps / kk,
                        r.recall_macro - rs / kk, r.f1_macro - fs_ / kk}) {
      worst = std::max(worst, std::abs(diff));
    }
  }
  std::ostringstream d;
  d << "1000 instances, max deviation " << worst;
  return {worst <= 1e-12, d.str()};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0 = no runtime limit
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "federated algebra identities", 5, federated_algebra},
      {2, "single-client federated run equals plain training", 60, single_client_equivalence},
      {3, "gradient check, 2-layer encoder, both heads", 120, gradient_verification},
      {4, "generated scenes are valid", 300, generator_validity},
      {5, "prompt optimizer contracts", 600, optimizer_contracts},
      {6, "prompt preset ordering high >= low >= default", 1800, preset_ordering},
      {7, "federated learning progress", 900, learning_progress},
      {8, "metrics match brute-force oracle", 5, metrics_oracle},
      {9, "no shard reads outside local training", 0, privacy_check},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.limit_s == 0 || secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %d %s: %s (%s; %.1f s%s)\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs,
                c.limit_s > 0 ? (in_time ? " within limit" : " over limit") : "");
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
