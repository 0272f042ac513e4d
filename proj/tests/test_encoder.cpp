#include <cmath>
#include <vector>

#include "doctest.h"
#include "fpott/encoder.hpp"
#include "fpott/error.hpp"
#include "fpott/gradient_check.hpp"
#include "fpott/optimizer.hpp"
#include "fpott/rng.hpp"

using namespace fpott;

namespace {

EncoderConfig small_config(std::uint64_t seed, bool classifier = true, bool tokens = true) {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_ff = 12;
  cfg.k_context = 5;
  cfg.seed = seed;
  if (tokens) {
    cfg.input = TokenEmbedding{20};
  } else {
    cfg.input = LinearProjection{3};
  }
  if (classifier) {
    cfg.head = Classifier{3};
  } else {
    cfg.head = Regressor{2};
  }
  return cfg;
}

Tensor random_input(const EncoderConfig& cfg, Rng& rng) {
  if (const auto* t = std::get_if<TokenEmbedding>(&cfg.input)) {
    Tensor x({cfg.k_context});
    for (auto& v : x.values()) v = static_cast<double>(rng.index(t->vocab_size));
    return x;
  }
  Tensor x({cfg.k_context, std::get<LinearProjection>(cfg.input).d_in});
  for (auto& v : x.values()) v = rng.normal();
  return x;
}

template <typename F>
std::string error_name(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.name();
  }
  return "";
}

}  // namespace

TEST_CASE("zero network gives uniform class probabilities") {
  const auto cfg = small_config(1);
  const auto p = zero_parameters(cfg);
  Rng rng(1);
  const auto out = encoder_forward(cfg, p, random_input(cfg, rng)).output;
  for (double v : out.values()) CHECK(v == 0.0);
  CHECK(loss(cfg.head, out.values(), std::size_t{0}).value ==
        doctest::Approx(std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("without positional encodings the classifier is permutation invariant") {
  for (bool tokens : {true, false}) {
    auto cfg = small_config(4, true, tokens);
    const auto p = init_parameters(cfg);
    Rng rng(2);
    const auto x = random_input(cfg, rng);
    auto swapped = x;
    const std::size_t width = x.size() / cfg.k_context;
    for (std::size_t j = 0; j < width; ++j) std::swap(swapped[0 * width + j], swapped[3 * width + j]);

    const auto a = encoder_forward(cfg, p, x).output;
    const auto b = encoder_forward(cfg, p, swapped).output;
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i] != b[i];
    CHECK(differs);

    cfg.positional_encoding = false;
    const auto p2 = ParameterSet::unflatten(make_layout(cfg), p.flatten());
    const auto c = encoder_forward(cfg, p2, x).output;
    const auto d = encoder_forward(cfg, p2, swapped).output;
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(d[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward and backward are bitwise repeatable") {
  const auto cfg = small_config(9);
  const auto p = init_parameters(cfg);
  Rng rng(3);
  const auto x = random_input(cfg, rng);
  const auto r1 = encoder_forward(cfg, p, x);
  const auto r2 = encoder_forward(cfg, p, x);
  CHECK(r1.output == r2.output);
  const std::vector<double> g{0.3, -0.2, 0.1};
  CHECK(encoder_backward(r1.cache, p, g) == encoder_backward(r2.cache, p, g));
  CHECK(init_parameters(cfg) == p);
}

TEST_CASE("attention rows are probability distributions") {
  const auto cfg = small_config(12);
  const auto p = init_parameters(cfg);
  Rng rng(4);
  const auto r = encoder_forward(cfg, p, random_input(cfg, rng));
  const std::size_t L = cfg.k_context;
  for (const auto& layer : r.cache.layers) {
    for (std::size_t row = 0; row < layer.probs.size() / L; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < L; ++j) s += layer.probs[row * L + j];
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("input shape is validated") {
  const auto cfg = small_config(1);
  const auto p = init_parameters(cfg);
  CHECK(error_name([&] { encoder_forward(cfg, p, Tensor({4})); }) == "ShapeMismatch");
  CHECK(error_name([&] { encoder_forward(cfg, p, Tensor({5}, 25.0)); }) == "ShapeMismatch");
  auto other = cfg;
  other.d_model = 4;
  CHECK(error_name([&] { encoder_forward(other, p, Tensor({5})); }) == "ShapeMismatch");
}

TEST_CASE("config validation") {
  EncoderConfig cfg;
  cfg.d_model = 10;
  cfg.n_heads = 4;
  CHECK(error_name([&] { cfg.validate(); }) == "BadConfig");
  cfg = EncoderConfig{};
  cfg.n_layers = 0;
  CHECK(error_name([&] { cfg.validate(); }) == "BadConfig");
}

TEST_CASE("loss values") {
  const std::vector<double> sharp{800.0, 0.0, 0.0};
  CHECK(cross_entropy(sharp, 0).value == 0.0);
  const std::vector<double> uniform{0.25, 0.25, 0.25};
  CHECK(cross_entropy(uniform, 2).value == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  const std::vector<double> y{1.5, -2.0};
  CHECK(mean_squared_error(y, y).value == 0.0);
  CHECK(error_name([&] { loss(Classifier{3}, y, std::size_t{0}); }) == "ShapeMismatch");
  CHECK(error_name([&] { loss(Regressor{2}, y, std::size_t{0}); }) == "ShapeMismatch");
  CHECK(error_name([&] { cross_entropy(uniform, 3); }) == "ShapeMismatch");
}

TEST_CASE("losses are non-negative on random inputs") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> z(3);
    for (auto& v : z) v = rng.uniform(-50, 50);
    CHECK(cross_entropy(z, rng.index(3)).value >= 0.0);
    std::vector<double> t(3);
    for (auto& v : t) v = rng.normal();
    CHECK(mean_squared_error(z, t).value >= 0.0);
  }
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
  const auto cfg = small_config(2);
  const auto p = init_parameters(cfg);
  Rng rng(5);
  const auto r = encoder_forward(cfg, p, random_input(cfg, rng));
  const std::vector<double> zero(3, 0.0);
  const auto grads = encoder_backward(r.cache, p, zero);
  for (double g : grads.values()) CHECK(g == 0.0);
}

TEST_CASE("backward refuses a cache from different parameters") {
  const auto cfg = small_config(2);
  auto p = init_parameters(cfg);
  Rng rng(5);
  const auto r = encoder_forward(cfg, p, random_input(cfg, rng));
  p.values()[0] += 1e-3;
  const std::vector<double> g(3, 1.0);
  CHECK(error_name([&] { encoder_backward(r.cache, p, g); }) == "StaleCache");
}

TEST_CASE("dense layer gradient matches the closed form for MSE") {
  Rng rng(6);
  const std::size_t batch = 6, in = 4, out = 3;
  Tensor x({batch, in}), w({in, out}), y({batch, out});
  for (auto& v : x.values()) v = rng.normal();
  for (auto& v : w.values()) v = rng.normal();
  for (auto& v : y.values()) v = rng.normal();
  const std::vector<double> zero_bias(out, 0.0);
  const auto pred = linear_forward(x, w, zero_bias);
  // L = sum over rows of ||x_r W - y_r||^2 / batch
  Tensor d_out({batch, out});
  for (std::size_t i = 0; i < d_out.size(); ++i) {
    d_out[i] = 2.0 * (pred[i] - y[i]) / static_cast<double>(batch);
  }
  const auto g = linear_backward(x, w, d_out);
  for (std::size_t a = 0; a < in; ++a) {
    for (std::size_t b = 0; b < out; ++b) {
      double want = 0.0;
      for (std::size_t r = 0; r < batch; ++r) {
        double xw = 0.0;
        for (std::size_t k = 0; k < in; ++k) xw += x(r, k) * w(k, b);
        want += x(r, a) * (xw - y(r, b));
      }
      want *= 2.0 / static_cast<double>(batch);
      CHECK(g.d_weight(a, b) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("dense layer passes the finite-difference check") {
  Rng rng(10);
  const std::size_t batch = 5, in = 6, out = 4;
  Tensor x({batch, in}), y({batch, out});
  for (auto& v : x.values()) v = rng.normal();
  for (auto& v : y.values()) v = rng.normal();
  std::vector<double> point(in * out + out);
  for (auto& v : point) v = rng.normal();

  auto split = [&](std::span<const double> v) {
    Tensor w({in, out}, std::vector<double>(v.begin(), v.begin() + in * out));
    return std::pair{w, std::vector<double>(v.begin() + in * out, v.end())};
  };
  auto loss_at = [&](std::span<const double> v) {
    const auto [w, b] = split(v);
    const auto pred = linear_forward(x, w, b);
    return mean_squared_error(pred.values(), y.values()).value;
  };
  const auto [w, b] = split(point);
  const auto pred = linear_forward(x, w, b);
  const auto lv = mean_squared_error(pred.values(), y.values());
  const auto g = linear_backward(x, w, Tensor({batch, out}, lv.grad));
  std::vector<double> analytic(g.d_weight.values().begin(), g.d_weight.values().end());
  analytic.insert(analytic.end(), g.d_bias.begin(), g.d_bias.end());
  std::vector<std::size_t> coords(point.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  CHECK(max_relative_error(loss_at, point, analytic, coords, 1e-5) < 1e-8);
}

TEST_CASE("full encoder passes the gradient check for both heads and input modes") {
  for (bool classifier : {true, false}) {
    for (bool tokens : {true, false}) {
      CAPTURE(classifier);
      CAPTURE(tokens);
      const auto cfg = small_config(21, classifier, tokens);
      const auto p = init_parameters(cfg);
      Rng rng(21);
      const auto x = random_input(cfg, rng);
      LossTarget target = std::size_t{1};
      if (!classifier) target = std::vector<double>{0.5, -1.0};
      const auto r = gradient_check(cfg, p, x, target);
      CHECK(r.coordinates >= 200);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("gradient check detects a doubled tensor gradient") {
  const auto cfg = small_config(5);
  const auto p = init_parameters(cfg);
  Rng rng(5);
  const auto x = random_input(cfg, rng);
  GradientCheckOptions opt;
  opt.corrupt_tensor = "layers.0.attn.wq";
  opt.corrupt_factor = 2.0;
  const auto r = gradient_check(cfg, p, x, std::size_t{2}, opt);
  CHECK(r.max_relative_error > 1e-1);
  CHECK(r.worst_tensor == "layers.0.attn.wq");
}

TEST_CASE("parameter layout is a pure function of the config") {
  const auto cfg = small_config(1);
  auto other = cfg;
  other.seed = 99;
  CHECK(ParameterLayout(cfg).total_size() == ParameterLayout(other).total_size());
  CHECK(cfg.fingerprint() == other.fingerprint());
  // embedding 20x8, 2 layers x (4*(64+8) + 4*8 + 8*12 + 12 + 12*8 + 8), final ln 16, head 8*3+3
  CHECK(ParameterLayout(cfg).total_size() == 160 + 2 * (288 + 32 + 96 + 12 + 96 + 8) + 16 + 27);
  other.d_ff = 13;
  CHECK(cfg.fingerprint() != other.fingerprint());
}

TEST_CASE("flatten and unflatten round-trip") {
  Rng rng(13);
  const auto cfg = small_config(1);
  const auto layout = make_layout(cfg);
  std::vector<double> v(layout->total_size());
  for (auto& x : v) x = rng.normal();
  const auto p = ParameterSet::unflatten(layout, v);
  CHECK(p.flatten() == v);
  v.pop_back();
  CHECK(error_name([&] { ParameterSet::unflatten(layout, v); }) == "ShapeMismatch");
}

TEST_CASE("serialization round-trips and checks the fingerprint") {
  const auto cfg = small_config(3);
  const auto p = init_parameters(cfg);
  const auto bytes = serialize_parameters(p);
  CHECK(bytes.size() == 16 + 8 * p.size());
  CHECK(payload_fingerprint(bytes) == cfg.fingerprint());
  CHECK(deserialize_parameters(bytes, p.layout_ptr()) == p);

  auto other = cfg;
  other.d_model = 4;
  CHECK(error_name([&] { deserialize_parameters(bytes, make_layout(other)); }) ==
        "FingerprintMismatch");
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  CHECK(error_name([&] { deserialize_parameters(cut, p.layout_ptr()); }) == "MalformedPayload");
}

TEST_CASE("SGD examples") {
  OptimizerState opt(Sgd{0.1, 0.0});
  std::vector<double> p{1.0}, g{1.0};
  optimizer_step(opt, p, g);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(opt.step == 1);
  std::vector<double> zero{0.0};
  optimizer_step(opt, p, zero);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));
  std::vector<double> two(2, 0.0);
  CHECK(error_name([&] { optimizer_step(opt, p, two); }) == "ShapeMismatch");
}

TEST_CASE("Adam matches a hand-stepped table on f(p) = p^2") {
  // Reference values computed independently with lr 0.1, betas (0.9, 0.999),
  // eps 1e-8, starting from p = 1.
  const double table[3] = {0.9000000005, 0.8004122286917928, 0.7015862729460303};
  OptimizerState opt(Adam{0.1, 0.9, 0.999, 1e-8});
  std::vector<double> p{1.0};
  for (int t = 0; t < 3; ++t) {
    std::vector<double> g{2.0 * p[0]};
    optimizer_step(opt, p, g);
    CHECK(p[0] == doctest::Approx(table[t]).epsilon(1e-14));
  }
  CHECK(opt.step == 3);
}
