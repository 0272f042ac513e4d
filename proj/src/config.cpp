#include "fpott/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "fpott/error.hpp"
#include "fpott/prompt.hpp"
#include "json.hpp"

namespace fpott {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& what) { throw Error("ConfigError", what); }

// Reads keys of one JSON object and remembers which were consumed, so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.is_object()) config_error(label() + " must be an object");
    obj_ = &root;
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = obj_->find(key);
    if (it == obj_->end()) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned()) {
        config_error(label() + "." + key + " must be a non-negative integer");
      }
    }
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      config_error(label() + "." + key + " has the wrong type");
    }
  }

  bool has(const char* key) const { return obj_->contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    const auto it = obj_->find(key);
    return Section(it == obj_->end() ? empty : *it, name_.empty() ? key : name_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, _] : obj_->items()) {
      if (!seen_.count(key)) config_error("unknown key " + label() + "." + key);
    }
  }

 private:
  std::string label() const { return name_.empty() ? "<root>" : name_; }

  const json* obj_ = nullptr;
  std::string name_;
  std::set<std::string> seen_;
};

void validate_config(const RunConfig& c) {
  try {
    if (c.data.k < 1) config_error("data.k must be >= 1");
    if (c.data.horizon < 1) config_error("data.horizon must be >= 1");
    if (c.data.stride < 1) config_error("data.stride must be >= 1");
    const auto& s = c.data.split;
    if (!(s.train > 0 && s.val > 0 && s.test > 0 && s.train + s.val + s.test <= 1.0 + 1e-12)) {
      config_error("data.split fractions must be positive and sum to at most 1");
    }
    encoder_config(c.predictor_config()).validate();
    if (c.model.max_len < 2) config_error("model.max_len must be >= 2");
    if (c.model.batch_size < 1) config_error("model.batch_size must be >= 1");
    if (!(c.model.learning_rate > 0)) config_error("model.learning_rate must be positive");
    preset_from_string(c.prompt.preset);
    if (c.prompt.max_iters > 50) config_error("prompt.max_iters must be <= 50");
    if (c.prompt.sample_train < 1 || c.prompt.sample_val < 1) {
      config_error("prompt samples must be non-empty");
    }
    c.federated.validate();
    c.generator.gen.validate();
    if (c.generator.m < 1) config_error("generator.m must be >= 1");
    if (!(c.generator.learning_rate > 0)) config_error("generator.learning_rate must be positive");
    EncoderConfig g;
    g.d_model = c.generator.dims.d_model;
    g.n_heads = c.generator.dims.n_heads;
    g.n_layers = c.generator.dims.n_layers;
    g.d_ff = c.generator.dims.d_ff;
    g.validate();
    if (c.compare.seeds.empty()) config_error("compare.seeds must be non-empty");
    if (c.compare.presets.size() != 3) config_error("compare.presets must name three presets");
    for (const auto& p : c.compare.presets) preset_from_string(p);
  } catch (const Error& e) {
    if (e.name() == "ConfigError") throw;
    config_error(e.what());
  }
}

}  // namespace

std::filesystem::path RunConfig::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::filesystem::path RunConfig::output_path(const std::string& name) const {
  return resolve(output_dir) / name;
}

PredictorConfig RunConfig::predictor_config() const {
  PredictorConfig pc;
  pc.d_model = model.d_model;
  pc.n_heads = model.n_heads;
  pc.n_layers = model.n_layers;
  pc.d_ff = model.d_ff;
  pc.max_len = model.max_len;
  pc.seed = seed;
  return pc;
}

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config(std::string_view json_text, std::filesystem::path base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    config_error(std::string("invalid JSON: ") + e.what());
  }
  RunConfig c;
  c.base_dir = std::move(base_dir);
  Section r(root, "");
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);

  {
    auto s = r.child("data");
    s.get("path", c.data.path);
    s.get("k", c.data.k);
    s.get("horizon", c.data.horizon);
    s.get("stride", c.data.stride);
    s.get("max_train", c.data.max_train);
    s.get("max_eval", c.data.max_eval);
    auto sp = s.child("split");
    sp.get("train", c.data.split.train);
    sp.get("val", c.data.split.val);
    sp.get("test", c.data.split.test);
    sp.finish();
    s.finish();
  }
  {
    auto s = r.child("model");
    s.get("d_model", c.model.d_model);
    s.get("n_heads", c.model.n_heads);
    s.get("n_layers", c.model.n_layers);
    s.get("d_ff", c.model.d_ff);
    s.get("max_len", c.model.max_len);
    s.get("learning_rate", c.model.learning_rate);
    s.get("batch_size", c.model.batch_size);
    s.get("epochs", c.model.epochs);
    s.finish();
  }
  {
    auto s = r.child("prompt");
    s.get("preset", c.prompt.preset);
    s.get("template", c.prompt.template_path);
    s.get("optimize", c.prompt.optimize);
    s.get("max_iters", c.prompt.max_iters);
    s.get("sample_train", c.prompt.sample_train);
    s.get("sample_val", c.prompt.sample_val);
    s.get("score_epochs", c.prompt.score_epochs);
    s.finish();
  }
  {
    auto s = r.child("federated");
    s.get("n_clients", c.federated.n_clients);
    s.get("alpha", c.federated.alpha);
    s.get("local_epochs", c.federated.local_epochs);
    s.get("rounds", c.federated.rounds);
    s.get("dropout_prob", c.federated.dropout_prob);
    s.finish();
  }
  {
    auto s = r.child("generator");
    auto& g = c.generator;
    s.get("m", g.m);
    s.get("T", g.gen.T);
    s.get("k", g.gen.k);
    s.get("v_max", g.gen.v_max);
    s.get("a_max", g.gen.a_max);
    s.get("lane_count", g.gen.lane_count);
    s.get("min_gap", g.gen.min_gap);
    s.get("smoothing_window", g.gen.smoothing_window);
    s.get("init_span", g.gen.init_span);
    s.get("use_reference", g.use_reference);
    s.get("checkpoint", g.checkpoint);
    s.get("d_model", g.dims.d_model);
    s.get("n_heads", g.dims.n_heads);
    s.get("n_layers", g.dims.n_layers);
    s.get("d_ff", g.dims.d_ff);
    s.get("train_epochs", g.train_epochs);
    s.get("max_windows", g.max_windows);
    s.get("learning_rate", g.learning_rate);
    s.finish();
  }
  {
    auto s = r.child("evaluate");
    s.get("checkpoint", c.evaluate.checkpoint);
    s.get("dataset", c.evaluate.dataset);
    s.get("template", c.evaluate.template_path);
    s.finish();
  }
  {
    auto s = r.child("compare");
    s.get("seeds", c.compare.seeds);
    s.get("presets", c.compare.presets);
    s.finish();
  }
  {
    auto s = r.child("validate");
    s.get("input", c.validate.input);
    s.finish();
  }
  r.finish();

  c.federated.batch_size = c.model.batch_size;
  c.federated.master_seed = c.seed;
  c.generator.gen.seed = c.seed;
  validate_config(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot read config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), std::filesystem::path(path).parent_path());
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["data"] = {{"path", c.data.path},
               {"k", c.data.k},
               {"horizon", c.data.horizon},
               {"stride", c.data.stride},
               {"max_train", c.data.max_train},
               {"max_eval", c.data.max_eval},
               {"split",
                {{"train", c.data.split.train},
                 {"val", c.data.split.val},
                 {"test", c.data.split.test}}}};
  j["model"] = {{"d_model", c.model.d_model},     {"n_heads", c.model.n_heads},
                {"n_layers", c.model.n_layers},   {"d_ff", c.model.d_ff},
                {"max_len", c.model.max_len},     {"learning_rate", c.model.learning_rate},
                {"batch_size", c.model.batch_size}, {"epochs", c.model.epochs}};
  j["prompt"] = {{"preset", c.prompt.preset},
                 {"template", c.prompt.template_path},
                 {"optimize", c.prompt.optimize},
                 {"max_iters", c.prompt.max_iters},
                 {"sample_train", c.prompt.sample_train},
                 {"sample_val", c.prompt.sample_val},
                 {"score_epochs", c.prompt.score_epochs}};
  j["federated"] = {{"n_clients", c.federated.n_clients},
                    {"alpha", c.federated.alpha},
                    {"local_epochs", c.federated.local_epochs},
                    {"rounds", c.federated.rounds},
                    {"dropout_prob", c.federated.dropout_prob}};
  const auto& g = c.generator;
  j["generator"] = {{"m", g.m},
                    {"T", g.gen.T},
                    {"k", g.gen.k},
                    {"v_max", g.gen.v_max},
                    {"a_max", g.gen.a_max},
                    {"lane_count", g.gen.lane_count},
                    {"min_gap", g.gen.min_gap},
                    {"smoothing_window", g.gen.smoothing_window},
                    {"init_span", g.gen.init_span},
                    {"use_reference", g.use_reference},
                    {"checkpoint", g.checkpoint},
                    {"d_model", g.dims.d_model},
                    {"n_heads", g.dims.n_heads},
                    {"n_layers", g.dims.n_layers},
                    {"d_ff", g.dims.d_ff},
                    {"train_epochs", g.train_epochs},
                    {"max_windows", g.max_windows},
                    {"learning_rate", g.learning_rate}};
  j["evaluate"] = {{"checkpoint", c.evaluate.checkpoint},
                   {"dataset", c.evaluate.dataset},
                   {"template", c.evaluate.template_path}};
  j["compare"] = {{"seeds", c.compare.seeds}, {"presets", c.compare.presets}};
  j["validate"] = {{"input", c.validate.input}};
  return j.dump(2) + "\n";
}

}  // namespace fpott
