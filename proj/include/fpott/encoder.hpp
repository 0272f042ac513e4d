#pragma once

// Pre-LN transformer encoder with hand-derived reverse mode. Two input modes
// (token embedding, linear projection of per-position features) and two heads
// (mean-pooled classifier, last-position regressor). Sinusoidal positional
// encodings are added after the input layer.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fpott/tensor.hpp"

namespace fpott {

struct TokenEmbedding {
  std::size_t vocab_size = 258;
  bool operator==(const TokenEmbedding&) const = default;
};
struct LinearProjection {
  std::size_t d_in = 1;
  bool operator==(const LinearProjection&) const = default;
};
struct Classifier {
  std::size_t n_classes = 3;
  bool operator==(const Classifier&) const = default;
};
struct Regressor {
  std::size_t d_out = 1;
  bool operator==(const Regressor&) const = default;
};

using InputMode = std::variant<TokenEmbedding, LinearProjection>;
using HeadMode = std::variant<Classifier, Regressor>;

struct EncoderConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 64;
  std::size_t k_context = 16;
  InputMode input = TokenEmbedding{};
  HeadMode head = Classifier{};
  bool positional_encoding = true;
  std::uint64_t seed = 0;

  // Throws "BadConfig".
  void validate() const;
  std::size_t output_size() const;
  // Hash of the fields that determine parameter shapes (seed and k_context
  // excluded: neither changes the parameter vector).
  std::uint64_t fingerprint() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct ParameterInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Canonical order and shapes of an encoder's parameters.
class ParameterLayout {
 public:
  explicit ParameterLayout(const EncoderConfig& cfg);

  std::span<const ParameterInfo> entries() const { return entries_; }
  const ParameterInfo& entry(std::string_view name) const;
  std::size_t total_size() const { return total_; }
  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  std::vector<ParameterInfo> entries_;
  std::size_t total_ = 0;
  std::uint64_t fingerprint_ = 0;
};

// Flat parameter vector plus the layout naming its slices. This is the unit
// exchanged between edge clients and the cloud.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::shared_ptr<const ParameterLayout> layout);

  static ParameterSet unflatten(std::shared_ptr<const ParameterLayout> layout,
                                std::vector<double> values);

  const ParameterLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParameterLayout>& layout_ptr() const { return layout_; }
  std::uint64_t fingerprint() const { return layout_ ? layout_->fingerprint() : 0; }

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double> flatten() const { return values_; }

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;

  bool compatible_with(const ParameterSet& other) const;
  bool operator==(const ParameterSet& other) const;

 private:
  std::shared_ptr<const ParameterLayout> layout_;
  std::vector<double> values_;
};

std::shared_ptr<const ParameterLayout> make_layout(const EncoderConfig& cfg);

// Xavier-uniform weights, N(0,1) token embeddings, unit layer-norm gains and
// zero biases, all drawn from cfg.seed.
ParameterSet init_parameters(const EncoderConfig& cfg);
ParameterSet zero_parameters(const EncoderConfig& cfg);

// FNV-1a over the raw bytes of the parameter vector.
std::uint64_t checksum(std::span<const double> values);

struct LayerCache {
  std::vector<double> x_in, ln1_hat, ln1_rstd, h1, q, k, v, probs, ctx;
  std::vector<double> ln2_hat, ln2_rstd, h2, ffn_pre, ffn_act;
};

// Activations retained by a forward pass for the matching backward pass.
struct ForwardCache {
  EncoderConfig cfg;
  std::uint64_t params_checksum = 0;
  std::vector<double> input;
  std::vector<LayerCache> layers;
  std::vector<double> lnf_hat, lnf_rstd, z, head_in;
  bool valid = false;
};

struct ForwardResult {
  Tensor output;
  ForwardCache cache;
};

// Input is [k_context] token ids (TokenEmbedding) or [k_context x d_in]
// features (LinearProjection). Throws "ShapeMismatch".
ForwardResult encoder_forward(const EncoderConfig& cfg, const ParameterSet& params,
                              const Tensor& input);

// Accumulates d(loss)/d(params) into `grads`. Throws "StaleCache" when the
// parameters differ from those the cache was produced with.
void encoder_backward(const ForwardCache& cache, const ParameterSet& params,
                      std::span<const double> output_grad, ParameterSet& grads);
ParameterSet encoder_backward(const ForwardCache& cache, const ParameterSet& params,
                              std::span<const double> output_grad);

// Sinusoidal table [positions x d_model].
std::vector<double> positional_encoding(std::size_t positions, std::size_t d_model);

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;  // d(loss)/d(output)
};

// Log-sum-exp stabilized cross-entropy of logits against a class index.
LossValue cross_entropy(std::span<const double> logits, std::size_t target);
// Mean over components of the squared error.
LossValue mean_squared_error(std::span<const double> output, std::span<const double> target);

using LossTarget = std::variant<std::size_t, std::vector<double>>;
// Cross-entropy for Classifier heads, MSE for Regressor heads.
LossValue loss(const HeadMode& head, std::span<const double> output, const LossTarget& target);

// A bare dense layer y = x W + b over a batch [batch x in]; used as the
// closed-form reference model for gradient verification.
Tensor linear_forward(const Tensor& x, const Tensor& weight, std::span<const double> bias);

struct LinearGrads {
  Tensor d_weight;
  std::vector<double> d_bias;
  Tensor d_input;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& d_output);

// Checkpoint / wire format: u64 config fingerprint, u64 value count, then the
// values as little-endian IEEE-754 doubles in canonical parameter order.
std::vector<std::uint8_t> serialize_parameters(const ParameterSet& params);
// Throws "FingerprintMismatch" or "MalformedPayload".
ParameterSet deserialize_parameters(std::span<const std::uint8_t> bytes,
                                    std::shared_ptr<const ParameterLayout> layout);
std::uint64_t payload_fingerprint(std::span<const std::uint8_t> bytes);

void save_parameters(const ParameterSet& params, const std::string& path);
ParameterSet load_parameters(const std::string& path, std::shared_ptr<const ParameterLayout> layout);

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint64_t get_u64_le(std::span<const std::uint8_t> bytes, std::size_t offset);

}  // namespace fpott
