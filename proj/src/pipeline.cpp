#include "fpott/pipeline.hpp"

#include <omp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fpott/error.hpp"
#include "fpott/predictor.hpp"
#include "fpott/rng.hpp"
#include "json.hpp"

namespace fpott {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path ensure_output_dir(const RunConfig& cfg) {
  const auto dir = cfg.resolve(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

Dataset load_data(const RunConfig& cfg) { return read_ngsim_csv(cfg.resolve(cfg.data.path)); }

PromptTemplate configured_template(const RunConfig& cfg) {
  if (!cfg.prompt.template_path.empty()) {
    return parse_template(read_text(cfg.resolve(cfg.prompt.template_path)));
  }
  return preset_template(preset_from_string(cfg.prompt.preset), cfg.data.k);
}

Adam model_optimizer(const RunConfig& cfg) { return Adam{cfg.model.learning_rate}; }

std::string model_label(const PredictorConfig& pc) {
  return "edge-d" + std::to_string(pc.d_model) + "-l" + std::to_string(pc.n_layers);
}

// Sidecar describing a checkpoint: dims, effective max_len, window length and
// prompt template.
std::string sidecar_json(const PredictorConfig& pc, std::size_t k, const PromptTemplate& tpl) {
  json j = {{"d_model", pc.d_model}, {"n_heads", pc.n_heads}, {"n_layers", pc.n_layers},
            {"d_ff", pc.d_ff},       {"max_len", pc.max_len}, {"k", k},
            {"template", serialize_template(tpl)}};
  return j.dump(2) + "\n";
}

fs::path sidecar_path(const fs::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".json");
  return p;
}

MetricsReport mean_report(const std::vector<MetricsReport>& rs) {
  MetricsReport m;
  for (const auto& r : rs) {
    m.precision_macro += r.precision_macro;
    m.recall_macro += r.recall_macro;
    m.f1_macro += r.f1_macro;
    m.accuracy += r.accuracy;
  }
  const auto n = static_cast<double>(rs.size());
  m.precision_macro /= n;
  m.recall_macro /= n;
  m.f1_macro /= n;
  m.accuracy /= n;
  return m;
}

// Maps an exception escaping a subcommand to an exit code.
int report_error(const Error& e, std::ostream& err, bool usage) {
  err << "error: " << e.what() << '\n';
  return usage ? kExitUsage : kExitFailure;
}

bool is_usage_error(const Error& e) { return e.name() == "ConfigError"; }

bool is_parse_error(const Error& e) {
  return e.name() == "MalformedRow" || e.name() == "DuplicateFrame" || e.name() == "EmptyInput" ||
         e.name() == "IoError";
}

}  // namespace

PreparedWindows prepare_windows(const Dataset& ds, const RunConfig& cfg, std::uint64_t seed) {
  const auto split = split_train_val_test(ds, cfg.data.split, seed);
  const auto& d = cfg.data;
  PreparedWindows w;
  w.train = balance_classes(extract_windows(split.train, d.k, d.horizon, d.stride), d.max_train,
                            derive_seed(seed, 1));
  w.val = balance_classes(extract_windows(split.val, d.k, d.horizon, d.stride), d.max_eval,
                          derive_seed(seed, 2));
  w.test = balance_classes(extract_windows(split.test, d.k, d.horizon, d.stride), d.max_eval,
                           derive_seed(seed, 3));
  return w;
}

// ---------------------------------------------------------------- generate

GenerateOutcome run_generate(const RunConfig& cfg) {
  const auto dir = ensure_output_dir(cfg);
  const auto& g = cfg.generator;
  GenerationConfig gen = g.gen;
  gen.seed = cfg.seed;

  std::optional<Dataset> reference;
  if (g.use_reference) reference = load_data(cfg);

  GeneratorModel model = make_generator(gen.k, g.dims, derive_seed(cfg.seed, 0x9e4));
  if (!g.checkpoint.empty()) {
    model.params = load_parameters(cfg.resolve(g.checkpoint).string(), model.params.layout_ptr());
  } else if (reference) {
    GeneratorTrainOptions opts;
    opts.epochs = g.train_epochs;
    opts.max_windows = g.max_windows;
    opts.learning_rate = g.learning_rate;
    train_generator(model, *reference, opts, derive_seed(cfg.seed, 0x7a1));
  }
  save_parameters(model.params, (dir / "generator.bin").string());

  const auto init = sample_initial_conditions(reference ? &*reference : nullptr, g.m, gen,
                                              derive_seed(cfg.seed, 0x1417));
  const auto raw = rollout(model, init, gen);

  GenerateOutcome outcome;
  try {
    auto pp = post_process(raw, gen);
    outcome.data = std::move(pp.data);
    outcome.report = std::move(pp.report);
    outcome.repair_sweeps = pp.repair_sweeps;
  } catch (const Error& e) {
    if (e.name() != "Unrepairable") throw;
    write_text(dir / "validation_report.txt", std::string("status: unrepairable\n") + e.what() + "\n");
    throw;
  }
  write_ngsim_csv_file(outcome.data, (dir / "synthetic.csv").string());
  write_text(dir / "validation_report.txt", outcome.report.to_text());
  return outcome;
}

int cmd_generate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const auto o = run_generate(cfg);
    out << "wrote " << cfg.output_path("synthetic.csv").string() << ": "
        << o.data.trajectories.size() << " vehicles, " << o.data.state_count() << " states, "
        << o.repair_sweeps << " repair sweeps\n"
        << o.report.to_text();
    return o.report.clean() ? kExitOk : kExitFailure;
  } catch (const Error& e) {
    return report_error(e, err, is_usage_error(e) || e.name() == "IoError");
  }
}

// ---------------------------------------------------------------- validate

int cmd_validate(const RunConfig& cfg, const std::string& input, std::ostream& out,
                 std::ostream& err) {
  std::string path = input;
  if (path.empty()) path = cfg.validate.input.empty() ? cfg.data.path : cfg.validate.input;
  Dataset ds;
  try {
    ds = read_ngsim_csv(input.empty() ? cfg.resolve(path).string() : path);
  } catch (const Error& e) {
    return report_error(e, err, true);
  }
  const auto report = validate_dataset(ds, cfg.generator.gen.min_gap, cfg.generator.gen.v_max);
  out << report.to_text();
  return report.clean() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- train

TrainOutcome run_train(const RunConfig& cfg) {
  const auto dir = ensure_output_dir(cfg);
  const auto data = load_data(cfg);
  const auto windows = prepare_windows(data, cfg, cfg.seed);
  if (windows.train.empty() || windows.val.empty()) {
    throw Error("EmptyDataset", "no labelled windows in the train or validation split");
  }

  TrainOutcome outcome;
  outcome.tpl = configured_template(cfg);
  if (cfg.prompt.optimize) {
    OptimizerConfig oc;
    oc.max_iters = cfg.prompt.max_iters;
    oc.seed = derive_seed(cfg.seed, 0x0b7);
    oc.space.max_context = cfg.data.k;
    oc.scoring.model = cfg.predictor_config();
    oc.scoring.train.epochs = cfg.prompt.score_epochs;
    oc.scoring.train.batch_size = cfg.model.batch_size;
    oc.scoring.train.optimizer = model_optimizer(cfg);
    const auto ts = balance_classes(windows.train, cfg.prompt.sample_train, derive_seed(cfg.seed, 4));
    const auto vs = balance_classes(windows.val, cfg.prompt.sample_val, derive_seed(cfg.seed, 5));
    outcome.prompt_search = optimize(outcome.tpl, ts, vs, oc);
    outcome.tpl = outcome.prompt_search->incumbent;
    write_text(dir / "prompt_history.csv", history_csv(*outcome.prompt_search));
  }

  const auto shards = shard_for_clients(windows.train, cfg.federated.n_clients, cfg.seed);
  std::vector<AccessCountingShard> client_data;
  std::size_t longest = 0;
  for (const auto& s : shards) {
    auto prompts = render_all(s, outcome.tpl);
    longest = std::max(longest, longest_prompt(prompts));
    client_data.emplace_back(std::move(prompts));
  }
  const auto val = render_all(windows.val, outcome.tpl);
  longest = std::max(longest, longest_prompt(val));

  FederatedOptions fo;
  fo.round = cfg.federated;
  fo.model = cfg.predictor_config();
  fo.model.max_len = std::min(cfg.model.max_len, longest + 1);
  fo.optimizer = model_optimizer(cfg);
  outcome.run = run_training(fo, client_data, val);
  for (const auto& c : client_data) {
    outcome.shard_reads.push_back(c.reads());
    outcome.stray_shard_reads.push_back(c.reads_outside_training());
  }
  fo.model.seed = cfg.seed;
  outcome.model = PredictorModel{encoder_config(fo.model), outcome.run.cloud.params};

  save_parameters(outcome.run.cloud.params, (dir / "model.bin").string());
  write_text(dir / "model.json", sidecar_json(fo.model, cfg.data.k, outcome.tpl));
  write_text(dir / "template.txt", serialize_template(outcome.tpl));
  write_text(dir / "rounds.csv", round_history_csv(outcome.run.history));
  write_text(dir / "config.json", config_to_json(cfg));
  return outcome;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const auto o = run_train(cfg);
    const auto& h = o.run.history;
    if (o.prompt_search) {
      out << "prompt search: " << o.prompt_search->history.size() - 1
          << " iterations, score " << format_fixed(o.prompt_search->history.front().score, 4)
          << " -> " << format_fixed(o.prompt_search->incumbent_score, 4) << '\n';
    }
    out << "rounds: " << h.size() - 1 << '\n';
    if (h.front().aggregate_metrics && h.back().aggregate_metrics) {
      out << "round 0 accuracy: " << format_fixed(h.front().aggregate_metrics->accuracy, 4) << '\n'
          << "final accuracy: " << format_fixed(h.back().aggregate_metrics->accuracy, 4) << '\n';
    }
    out << "wrote " << cfg.output_path("model.bin").string() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    return report_error(e, err, is_usage_error(e));
  }
}

// ---------------------------------------------------------------- evaluate

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const auto dir = ensure_output_dir(cfg);
    const fs::path ckpt = cfg.evaluate.checkpoint.empty() ? cfg.output_path("model.bin")
                                                          : cfg.resolve(cfg.evaluate.checkpoint);
    PredictorConfig pc = cfg.predictor_config();
    PromptTemplate tpl = configured_template(cfg);
    const auto side = sidecar_path(ckpt);
    if (fs::exists(side)) {
      json j;
      try {
        j = json::parse(read_text(side));
        pc.d_model = j.at("d_model").get<std::size_t>();
        pc.n_heads = j.at("n_heads").get<std::size_t>();
        pc.n_layers = j.at("n_layers").get<std::size_t>();
        pc.d_ff = j.at("d_ff").get<std::size_t>();
        pc.max_len = j.at("max_len").get<std::size_t>();
        tpl = parse_template(j.at("template").get<std::string>());
      } catch (const json::exception& e) {
        throw Error("ConfigError", "bad checkpoint sidecar " + side.string() + ": " + e.what());
      }
    }
    if (!cfg.evaluate.template_path.empty()) {
      tpl = parse_template(read_text(cfg.resolve(cfg.evaluate.template_path)));
    }
    PredictorModel model = zero_predictor(pc);
    model.params = load_parameters(ckpt.string(), model.params.layout_ptr());

    std::vector<Window> windows;
    const auto& which = cfg.evaluate.dataset;
    if (which == "train" || which == "val" || which == "test") {
      const auto w = prepare_windows(load_data(cfg), cfg, cfg.seed);
      windows = which == "train" ? w.train : which == "val" ? w.val : w.test;
    } else {
      const auto ds = read_ngsim_csv(cfg.resolve(which).string());
      windows = balance_classes(extract_windows(ds, cfg.data.k, cfg.data.horizon, cfg.data.stride),
                                cfg.data.max_eval, derive_seed(cfg.seed, 6));
    }
    if (windows.empty()) throw Error("EmptyDataset", "no labelled windows to evaluate");
    const auto result = evaluate(model, render_all(windows, tpl));
    const std::string dataset_label = fs::path(which).stem().string();
    const auto row = metrics_csv_row(model_label(pc), dataset_label, result.metrics);
    write_text(dir / "metrics.csv", std::string(kMetricsCsvHeader) + "\n" + row + "\n");
    out << kMetricsCsvHeader << '\n' << row << '\n';
    return kExitOk;
  } catch (const Error& e) {
    const bool usage = is_usage_error(e) || e.name() == "FingerprintMismatch" ||
                       e.name() == "MalformedPayload" || is_parse_error(e);
    return report_error(e, err, usage);
  }
}

// ---------------------------------------------------------------- compare-prompts

CompareOutcome run_compare_prompts(const RunConfig& cfg) {
  const auto dir = ensure_output_dir(cfg);
  const auto data = load_data(cfg);
  CompareOutcome outcome;
  for (std::size_t p = 0; p < 3; ++p) outcome.presets[p].preset = cfg.compare.presets[p];

  std::ostringstream seeds_csv;
  seeds_csv << "seed,preset,precision,recall,f1,accuracy\n";
  for (const auto seed : cfg.compare.seeds) {
    const auto w = prepare_windows(data, cfg, seed);
    if (w.train.empty() || w.val.empty()) {
      throw Error("EmptyDataset", "seed " + std::to_string(seed) + " leaves an empty split");
    }
    for (auto& slot : outcome.presets) {
      const auto tpl = preset_template(preset_from_string(slot.preset), cfg.data.k);
      const auto train = render_all(w.train, tpl);
      const auto val = render_all(w.val, tpl);
      PredictorConfig pc = cfg.predictor_config();
      pc.seed = seed;
      pc.max_len = std::min(pc.max_len, std::max(longest_prompt(train), longest_prompt(val)) + 1);
      auto model = make_predictor(pc);
      TrainOptions to;
      to.epochs = cfg.model.epochs;
      to.batch_size = cfg.model.batch_size;
      to.optimizer = model_optimizer(cfg);
      train_local(model, train, to, derive_seed(seed, 0x7e));
      const auto r = evaluate(model, val).metrics;
      slot.per_seed.push_back(r);
      seeds_csv << seed << ',' << slot.preset << ',' << format_fixed(r.precision_macro, 4) << ','
                << format_fixed(r.recall_macro, 4) << ',' << format_fixed(r.f1_macro, 4) << ','
                << format_fixed(r.accuracy, 4) << '\n';
    }
  }

  std::ostringstream mean_csv;
  mean_csv << kMetricsCsvHeader << '\n';
  for (auto& slot : outcome.presets) {
    slot.mean = mean_report(slot.per_seed);
    mean_csv << metrics_csv_row(model_label(cfg.predictor_config()) + "-" + slot.preset,
                                fs::path(cfg.data.path).stem().string(), slot.mean)
             << '\n';
  }
  const double a0 = outcome.presets[0].mean.accuracy;
  const double a1 = outcome.presets[1].mean.accuracy;
  const double a2 = outcome.presets[2].mean.accuracy;
  outcome.ordering_holds = a2 >= a1 && a1 >= a0;
  outcome.margin = a2 - a0;
  write_text(dir / "compare_prompts.csv", mean_csv.str());
  write_text(dir / "compare_prompts_seeds.csv", seeds_csv.str());
  return outcome;
}

int cmd_compare_prompts(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const auto o = run_compare_prompts(cfg);
    out << "preset,precision,recall,f1,accuracy (mean over " << cfg.compare.seeds.size()
        << " seeds)\n";
    for (const auto& s : o.presets) {
      out << s.preset << ',' << format_fixed(s.mean.precision_macro, 4) << ','
          << format_fixed(s.mean.recall_macro, 4) << ',' << format_fixed(s.mean.f1_macro, 4)
          << ',' << format_fixed(s.mean.accuracy, 4) << '\n';
    }
    out << "ordering " << o.presets[2].preset << " >= " << o.presets[1].preset
        << " >= " << o.presets[0].preset << ": " << (o.ordering_holds ? "PASS" : "FAIL")
        << " (margin " << format_fixed(o.margin, 4) << ")\n";
    return kExitOk;
  } catch (const Error& e) {
    return report_error(e, err, is_usage_error(e));
  }
}

// ---------------------------------------------------------------- CLI

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated prompt-optimized trajectory transformer toolkit"};
  app.require_subcommand(1);
  std::string config_path, out_dir, input;
  std::optional<std::uint64_t> seed;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "master seed (overrides seed)");
  };
  auto* gen = app.add_subcommand("generate", "synthesize and certify an NGSIM-format scene");
  auto* val = app.add_subcommand("validate", "check a CSV for collisions, speeds and kinematics");
  auto* train = app.add_subcommand("train", "prompt search plus federated training");
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint; prints one metrics row");
  auto* cmp = app.add_subcommand("compare-prompts", "Default / Low / High prompt comparison");
  for (auto* s : {gen, val, train, eval, cmp}) add_common(s);
  val->add_option("--input", input, "CSV to validate (default: validate.input or data.path)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (const char* t = std::getenv("FPOTT_THREADS")) {
    const int n = std::atoi(t);
    if (n < 1) {
      err << "error: FPOTT_THREADS must be a positive integer\n";
      return kExitUsage;
    }
    omp_set_num_threads(n);
  }

  RunConfig cfg;
  try {
    cfg = config_path.empty() ? parse_config("{}") : load_config(config_path);
  } catch (const Error& e) {
    return report_error(e, err, true);
  }
  if (!out_dir.empty()) {
    cfg.output_dir = fs::absolute(out_dir).string();
  }
  if (seed) {
    cfg.seed = *seed;
    cfg.federated.master_seed = *seed;
    cfg.generator.gen.seed = *seed;
  }

  if (gen->parsed()) return cmd_generate(cfg, out, err);
  if (val->parsed()) return cmd_validate(cfg, input, out, err);
  if (train->parsed()) return cmd_train(cfg, out, err);
  if (eval->parsed()) return cmd_evaluate(cfg, out, err);
  return cmd_compare_prompts(cfg, out, err);
}

}  // namespace fpott
