#include "fpott/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "fpott/error.hpp"
#include "fpott/kernels.hpp"
#include "fpott/rng.hpp"

namespace fpott {

using kernels::ConstMatrixRef;
using kernels::MatrixRef;
using kernels::Op;

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void gemm(Op oa, Op ob, ConstMatrixRef a, ConstMatrixRef b, MatrixRef c, bool acc) {
  kernels::parallel::gemm(oa, ob, a, b, c, acc);
}

ConstMatrixRef cm(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return {v.data(), rows, cols, cols};
}
ConstMatrixRef cm(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return {v.data(), rows, cols, cols};
}
MatrixRef mm(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return {v.data(), rows, cols, cols};
}
MatrixRef mm(std::span<double> v, std::size_t rows, std::size_t cols) {
  return {v.data(), rows, cols, cols};
}

void add_bias(std::vector<double>& x, std::size_t rows, std::span<const double> bias) {
  const std::size_t n = bias.size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) x[r * n + j] += bias[j];
  }
}

void column_sums_into(const std::vector<double>& x, std::size_t rows, std::span<double> out) {
  const std::size_t n = out.size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[j] += x[r * n + j];
  }
}

void ln_forward(const std::vector<double>& x, std::size_t rows, std::size_t d,
                std::span<const double> gain, std::span<const double> bias,
                std::vector<double>& hat, std::vector<double>& rstd, std::vector<double>& out) {
  hat.resize(rows * d);
  rstd.resize(rows);
  out.resize(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * rs;
      hat[r * d + j] = h;
      out[r * d + j] = gain[j] * h + bias[j];
    }
  }
}

// dx += LN'(dy); also accumulates gain/bias gradients.
void ln_backward(const std::vector<double>& dy, const std::vector<double>& hat,
                 const std::vector<double>& rstd, std::size_t rows, std::size_t d,
                 std::span<const double> gain, std::span<double> dgain, std::span<double> dbias,
                 std::vector<double>& dx) {
  std::vector<double> dhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_dhat = 0.0, mean_dhat_hat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy[r * d + j];
      dgain[j] += g * hat[r * d + j];
      dbias[j] += g;
      dhat[j] = g * gain[j];
      mean_dhat += dhat[j];
      mean_dhat_hat += dhat[j] * hat[r * d + j];
    }
    mean_dhat /= static_cast<double>(d);
    mean_dhat_hat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx[r * d + j] += rstd[r] * (dhat[j] - mean_dhat - hat[r * d + j] * mean_dhat_hat);
    }
  }
}

// dst[c * rows + r] = src[r * cols + c]
void transpose_into(const double* src, std::size_t rows, std::size_t cols, std::size_t src_stride,
                    double* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * src_stride + c];
  }
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

struct LayerSlots {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Slots {
  std::size_t embed = 0, in_w = 0, in_b = 0;
  std::vector<LayerSlots> layers;
  std::size_t lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;
};

// Entry indices in canonical order; must mirror ParameterLayout's constructor.
Slots slots_for(const EncoderConfig& cfg) {
  Slots s;
  std::size_t i = 0;
  if (std::holds_alternative<TokenEmbedding>(cfg.input)) {
    s.embed = i++;
  } else {
    s.in_w = i++;
    s.in_b = i++;
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerSlots ls{};
    ls.ln1_g = i++;
    ls.ln1_b = i++;
    ls.wq = i++;
    ls.bq = i++;
    ls.wk = i++;
    ls.bk = i++;
    ls.wv = i++;
    ls.bv = i++;
    ls.wo = i++;
    ls.bo = i++;
    ls.ln2_g = i++;
    ls.ln2_b = i++;
    ls.w1 = i++;
    ls.b1 = i++;
    ls.w2 = i++;
    ls.b2 = i++;
    s.layers.push_back(ls);
  }
  s.lnf_g = i++;
  s.lnf_b = i++;
  s.head_w = i++;
  s.head_b = i++;
  return s;
}

std::span<const double> slice(const ParameterSet& p, std::size_t entry) {
  const auto& e = p.layout().entries()[entry];
  return p.values().subspan(e.offset, e.size);
}
std::span<double> slice(ParameterSet& p, std::size_t entry) {
  const auto& e = p.layout().entries()[entry];
  return p.values().subspan(e.offset, e.size);
}

}  // namespace

// ---------------------------------------------------------------- config

void EncoderConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error("BadConfig", m); };
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 || k_context < 1) {
    bad("all encoder dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
  if (const auto* t = std::get_if<TokenEmbedding>(&input); t && t->vocab_size < 1) {
    bad("vocab_size must be >= 1");
  }
  if (const auto* p = std::get_if<LinearProjection>(&input); p && p->d_in < 1) {
    bad("d_in must be >= 1");
  }
  if (output_size() < 1) bad("head output size must be >= 1");
}

std::size_t EncoderConfig::output_size() const {
  return std::visit(
      [](const auto& h) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(h)>, Classifier>) {
          return h.n_classes;
        } else {
          return h.d_out;
        }
      },
      head);
}

std::uint64_t EncoderConfig::fingerprint() const {
  std::ostringstream s;
  s << "d_model=" << d_model << ";n_heads=" << n_heads << ";n_layers=" << n_layers
    << ";d_ff=" << d_ff << ";pe=" << positional_encoding << ";input=";
  if (const auto* t = std::get_if<TokenEmbedding>(&input)) {
    s << "token:" << t->vocab_size;
  } else {
    s << "linear:" << std::get<LinearProjection>(input).d_in;
  }
  s << ";head=";
  if (const auto* c = std::get_if<Classifier>(&head)) {
    s << "classifier:" << c->n_classes;
  } else {
    s << "regressor:" << std::get<Regressor>(head).d_out;
  }
  return fnv1a(s.str());
}

// ---------------------------------------------------------------- layout

ParameterLayout::ParameterLayout(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    std::size_t size = 1;
    for (auto x : shape) size *= x;
    entries_.push_back({std::move(name), std::move(shape), total_, size});
    total_ += size;
  };
  if (const auto* t = std::get_if<TokenEmbedding>(&cfg.input)) {
    add("embedding", {t->vocab_size, d});
  } else {
    const auto d_in = std::get<LinearProjection>(cfg.input).d_in;
    add("input.weight", {d_in, d});
    add("input.bias", {d});
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    add(p + "ln1.gain", {d});
    add(p + "ln1.bias", {d});
    add(p + "attn.wq", {d, d});
    add(p + "attn.bq", {d});
    add(p + "attn.wk", {d, d});
    add(p + "attn.bk", {d});
    add(p + "attn.wv", {d, d});
    add(p + "attn.bv", {d});
    add(p + "attn.wo", {d, d});
    add(p + "attn.bo", {d});
    add(p + "ln2.gain", {d});
    add(p + "ln2.bias", {d});
    add(p + "ffn.w1", {d, cfg.d_ff});
    add(p + "ffn.b1", {cfg.d_ff});
    add(p + "ffn.w2", {cfg.d_ff, d});
    add(p + "ffn.b2", {d});
  }
  add("final_ln.gain", {d});
  add("final_ln.bias", {d});
  add("head.weight", {d, cfg.output_size()});
  add("head.bias", {cfg.output_size()});
  fingerprint_ = cfg.fingerprint();
}

const ParameterInfo& ParameterLayout::entry(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw Error("UnknownParameter", std::string(name));
}

std::shared_ptr<const ParameterLayout> make_layout(const EncoderConfig& cfg) {
  return std::make_shared<const ParameterLayout>(cfg);
}

// ---------------------------------------------------------------- parameter set

ParameterSet::ParameterSet(std::shared_ptr<const ParameterLayout> layout)
    : layout_(std::move(layout)), values_(layout_->total_size(), 0.0) {}

ParameterSet ParameterSet::unflatten(std::shared_ptr<const ParameterLayout> layout,
                                     std::vector<double> values) {
  if (values.size() != layout->total_size()) {
    throw Error("ShapeMismatch", "expected " + std::to_string(layout->total_size()) +
                                     " parameters, got " + std::to_string(values.size()));
  }
  ParameterSet p;
  p.layout_ = std::move(layout);
  p.values_ = std::move(values);
  return p;
}

std::span<double> ParameterSet::tensor(std::string_view name) {
  const auto& e = layout_->entry(name);
  return std::span<double>(values_).subspan(e.offset, e.size);
}

std::span<const double> ParameterSet::tensor(std::string_view name) const {
  const auto& e = layout_->entry(name);
  return std::span<const double>(values_).subspan(e.offset, e.size);
}

bool ParameterSet::compatible_with(const ParameterSet& other) const {
  return layout_ && other.layout_ && fingerprint() == other.fingerprint() &&
         values_.size() == other.values_.size();
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  return compatible_with(other) && values_ == other.values_;
}

ParameterSet init_parameters(const EncoderConfig& cfg) {
  ParameterSet p(make_layout(cfg));
  Rng rng(derive_seed(cfg.seed, 0xe1c0));
  for (const auto& e : p.layout().entries()) {
    auto v = p.values().subspan(e.offset, e.size);
    const bool is_gain = e.name.ends_with(".gain");
    if (e.name == "embedding") {
      for (auto& x : v) x = rng.normal();
    } else if (e.shape.size() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(e.shape[0] + e.shape[1]));
      for (auto& x : v) x = rng.uniform(-limit, limit);
    } else if (is_gain) {
      std::fill(v.begin(), v.end(), 1.0);
    }
  }
  return p;
}

ParameterSet zero_parameters(const EncoderConfig& cfg) { return ParameterSet(make_layout(cfg)); }

std::uint64_t checksum(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double x : values) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::vector<double> positional_encoding(std::size_t positions, std::size_t d_model) {
  std::vector<double> pe(positions * d_model);
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe[pos * d_model + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d_model) pe[pos * d_model + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

// ---------------------------------------------------------------- forward

ForwardResult encoder_forward(const EncoderConfig& cfg, const ParameterSet& params,
                              const Tensor& input) {
  cfg.validate();
  if (!params.layout_ptr() || params.fingerprint() != cfg.fingerprint()) {
    throw Error("ShapeMismatch", "parameter set does not belong to this encoder config");
  }
  const std::size_t L = cfg.k_context;
  const std::size_t d = cfg.d_model;
  const std::size_t H = cfg.n_heads;
  const std::size_t dh = d / H;
  const std::size_t dff = cfg.d_ff;
  const Slots s = slots_for(cfg);

  ForwardResult res;
  ForwardCache& c = res.cache;
  c.cfg = cfg;
  c.params_checksum = checksum(params.values());
  c.input.assign(input.values().begin(), input.values().end());

  std::vector<double> x(L * d, 0.0);
  if (const auto* tok = std::get_if<TokenEmbedding>(&cfg.input)) {
    if (input.rank() != 1 || input.dim(0) != L) {
      throw Error("ShapeMismatch", "token input must have shape [k_context]");
    }
    const auto emb = slice(params, s.embed);
    for (std::size_t r = 0; r < L; ++r) {
      const double id = input[r];
      if (id < 0 || id >= static_cast<double>(tok->vocab_size) || id != std::floor(id)) {
        throw Error("ShapeMismatch", "token id out of vocabulary");
      }
      const auto t = static_cast<std::size_t>(id);
      std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>(t * d), d,
                  x.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
  } else {
    const auto d_in = std::get<LinearProjection>(cfg.input).d_in;
    if (input.rank() != 2 || input.dim(0) != L || input.dim(1) != d_in) {
      throw Error("ShapeMismatch", "feature input must have shape [k_context x d_in]");
    }
    gemm(Op::N, Op::N, cm(input.values(), L, d_in), cm(slice(params, s.in_w), d_in, d),
         mm(x, L, d), false);
    add_bias(x, L, slice(params, s.in_b));
  }
  if (cfg.positional_encoding) {
    const auto pe = positional_encoding(L, d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += pe[i];
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerSlots& ls = s.layers[l];
    LayerCache& lc = c.layers[l];
    lc.x_in = x;

    ln_forward(x, L, d, slice(params, ls.ln1_g), slice(params, ls.ln1_b), lc.ln1_hat,
               lc.ln1_rstd, lc.h1);
    lc.q.assign(L * d, 0.0);
    lc.k.assign(L * d, 0.0);
    lc.v.assign(L * d, 0.0);
    gemm(Op::N, Op::N, cm(lc.h1, L, d), cm(slice(params, ls.wq), d, d), mm(lc.q, L, d), false);
    gemm(Op::N, Op::N, cm(lc.h1, L, d), cm(slice(params, ls.wk), d, d), mm(lc.k, L, d), false);
    gemm(Op::N, Op::N, cm(lc.h1, L, d), cm(slice(params, ls.wv), d, d), mm(lc.v, L, d), false);
    add_bias(lc.q, L, slice(params, ls.bq));
    add_bias(lc.k, L, slice(params, ls.bk));
    add_bias(lc.v, L, slice(params, ls.bv));

    // Head slices are used transposed ([dh x L]) so every product runs its
    // inner loop over sequence positions rather than the short head width.
    lc.probs.assign(H * L * L, 0.0);
    lc.ctx.assign(L * d, 0.0);
    std::vector<double> kt(d * L), vt(d * L), ctxt(dh * L);
    transpose_into(lc.k.data(), L, d, d, kt.data());
    transpose_into(lc.v.data(), L, d, d, vt.data());
    for (std::size_t h = 0; h < H; ++h) {
      double* p = lc.probs.data() + h * L * L;
      gemm(Op::N, Op::N, {lc.q.data() + h * dh, L, dh, d}, {kt.data() + h * dh * L, dh, L, L},
           {p, L, L, L}, false);
      for (std::size_t r = 0; r < L; ++r) {
        double* row = p + r * L;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < L; ++j) {
          row[j] *= scale;
          mx = std::max(mx, row[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < L; ++j) row[j] *= inv;
      }
      gemm(Op::N, Op::T, {vt.data() + h * dh * L, dh, L, L}, {p, L, L, L}, {ctxt.data(), dh, L, L},
           false);
      for (std::size_t i = 0; i < dh; ++i) {
        for (std::size_t r = 0; r < L; ++r) lc.ctx[r * d + h * dh + i] = ctxt[i * L + r];
      }
    }
    std::vector<double> attn(L * d, 0.0);
    gemm(Op::N, Op::N, cm(lc.ctx, L, d), cm(slice(params, ls.wo), d, d), mm(attn, L, d), false);
    add_bias(attn, L, slice(params, ls.bo));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn[i];

    ln_forward(x, L, d, slice(params, ls.ln2_g), slice(params, ls.ln2_b), lc.ln2_hat,
               lc.ln2_rstd, lc.h2);
    lc.ffn_pre.assign(L * dff, 0.0);
    gemm(Op::N, Op::N, cm(lc.h2, L, d), cm(slice(params, ls.w1), d, dff), mm(lc.ffn_pre, L, dff),
         false);
    add_bias(lc.ffn_pre, L, slice(params, ls.b1));
    lc.ffn_act.resize(L * dff);
    for (std::size_t i = 0; i < lc.ffn_pre.size(); ++i) lc.ffn_act[i] = gelu(lc.ffn_pre[i]);
    std::vector<double> ffn(L * d, 0.0);
    gemm(Op::N, Op::N, cm(lc.ffn_act, L, dff), cm(slice(params, ls.w2), dff, d), mm(ffn, L, d),
         false);
    add_bias(ffn, L, slice(params, ls.b2));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += ffn[i];
  }

  ln_forward(x, L, d, slice(params, s.lnf_g), slice(params, s.lnf_b), c.lnf_hat, c.lnf_rstd, c.z);

  c.head_in.assign(d, 0.0);
  if (std::holds_alternative<Classifier>(cfg.head)) {
    for (std::size_t r = 0; r < L; ++r) {
      for (std::size_t j = 0; j < d; ++j) c.head_in[j] += c.z[r * d + j];
    }
    for (auto& v : c.head_in) v /= static_cast<double>(L);
  } else {
    std::copy_n(c.z.begin() + static_cast<std::ptrdiff_t>((L - 1) * d), d, c.head_in.begin());
  }
  const std::size_t n_out = cfg.output_size();
  std::vector<double> out(n_out, 0.0);
  gemm(Op::N, Op::N, cm(c.head_in, 1, d), cm(slice(params, s.head_w), d, n_out),
       mm(out, 1, n_out), false);
  const auto hb = slice(params, s.head_b);
  for (std::size_t j = 0; j < n_out; ++j) out[j] += hb[j];

  res.output = Tensor({n_out}, std::move(out));
  c.valid = true;
  return res;
}

// ---------------------------------------------------------------- backward

void encoder_backward(const ForwardCache& c, const ParameterSet& params,
                      std::span<const double> output_grad, ParameterSet& grads) {
  if (!c.valid || checksum(params.values()) != c.params_checksum) {
    throw Error("StaleCache", "parameters changed since the forward pass");
  }
  const EncoderConfig& cfg = c.cfg;
  if (!grads.compatible_with(params)) {
    throw Error("ShapeMismatch", "gradient buffer does not match parameters");
  }
  const std::size_t n_out = cfg.output_size();
  if (output_grad.size() != n_out) throw Error("ShapeMismatch", "output gradient size");
  const std::size_t L = cfg.k_context;
  const std::size_t d = cfg.d_model;
  const std::size_t H = cfg.n_heads;
  const std::size_t dh = d / H;
  const std::size_t dff = cfg.d_ff;
  const Slots s = slots_for(cfg);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Head.
  gemm(Op::T, Op::N, cm(c.head_in, 1, d), cm(output_grad, 1, n_out),
       mm(slice(grads, s.head_w), d, n_out), true);
  {
    auto hb = slice(grads, s.head_b);
    for (std::size_t j = 0; j < n_out; ++j) hb[j] += output_grad[j];
  }
  std::vector<double> d_head_in(d, 0.0);
  gemm(Op::N, Op::T, cm(output_grad, 1, n_out), cm(slice(params, s.head_w), d, n_out),
       mm(d_head_in, 1, d), false);

  std::vector<double> dz(L * d, 0.0);
  if (std::holds_alternative<Classifier>(cfg.head)) {
    const double inv = 1.0 / static_cast<double>(L);
    for (std::size_t r = 0; r < L; ++r) {
      for (std::size_t j = 0; j < d; ++j) dz[r * d + j] = d_head_in[j] * inv;
    }
  } else {
    std::copy(d_head_in.begin(), d_head_in.end(), dz.begin() + static_cast<std::ptrdiff_t>((L - 1) * d));
  }

  std::vector<double> dx(L * d, 0.0);
  ln_backward(dz, c.lnf_hat, c.lnf_rstd, L, d, slice(params, s.lnf_g), slice(grads, s.lnf_g),
              slice(grads, s.lnf_b), dx);

  std::vector<double> tmp_ld(L * d), tmp_lf(L * dff), dprob(L * L);
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const LayerSlots& ls = s.layers[li];
    const LayerCache& lc = c.layers[li];

    // Feed-forward branch: x_out = x_mid + W2 gelu(W1 LN2(x_mid)).
    gemm(Op::T, Op::N, cm(lc.ffn_act, L, dff), cm(dx, L, d), mm(slice(grads, ls.w2), dff, d),
         true);
    column_sums_into(dx, L, slice(grads, ls.b2));
    std::vector<double>& d_act = tmp_lf;
    gemm(Op::N, Op::T, cm(dx, L, d), cm(slice(params, ls.w2), dff, d), mm(d_act, L, dff), false);
    for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] *= gelu_grad(lc.ffn_pre[i]);
    gemm(Op::T, Op::N, cm(lc.h2, L, d), cm(d_act, L, dff), mm(slice(grads, ls.w1), d, dff), true);
    column_sums_into(d_act, L, slice(grads, ls.b1));
    std::vector<double>& d_h2 = tmp_ld;
    gemm(Op::N, Op::T, cm(d_act, L, dff), cm(slice(params, ls.w1), d, dff), mm(d_h2, L, d), false);
    ln_backward(d_h2, lc.ln2_hat, lc.ln2_rstd, L, d, slice(params, ls.ln2_g),
                slice(grads, ls.ln2_g), slice(grads, ls.ln2_b), dx);

    // Attention branch: x_mid = x_in + Wo concat_h(softmax(Q K^T * scale) V).
    gemm(Op::T, Op::N, cm(lc.ctx, L, d), cm(dx, L, d), mm(slice(grads, ls.wo), d, d), true);
    column_sums_into(dx, L, slice(grads, ls.bo));
    std::vector<double> d_ctx(L * d, 0.0);
    gemm(Op::N, Op::T, cm(dx, L, d), cm(slice(params, ls.wo), d, d), mm(d_ctx, L, d), false);

    std::vector<double> dq(L * d, 0.0), dk(L * d, 0.0), dv(L * d, 0.0);
    std::vector<double> qt(d * L), kt(d * L), vt(d * L), dctxt(d * L), headt(dh * L);
    transpose_into(lc.q.data(), L, d, d, qt.data());
    transpose_into(lc.k.data(), L, d, d, kt.data());
    transpose_into(lc.v.data(), L, d, d, vt.data());
    transpose_into(d_ctx.data(), L, d, d, dctxt.data());
    auto scatter_head = [&](std::vector<double>& dst, std::size_t h) {
      for (std::size_t i = 0; i < dh; ++i) {
        for (std::size_t r = 0; r < L; ++r) dst[r * d + h * dh + i] = headt[i * L + r];
      }
    };
    for (std::size_t h = 0; h < H; ++h) {
      const double* p = lc.probs.data() + h * L * L;
      const ConstMatrixRef dctxt_h{dctxt.data() + h * dh * L, dh, L, L};
      gemm(Op::N, Op::N, {d_ctx.data() + h * dh, L, dh, d}, {vt.data() + h * dh * L, dh, L, L},
           {dprob.data(), L, L, L}, false);
      gemm(Op::N, Op::N, dctxt_h, {p, L, L, L}, {headt.data(), dh, L, L}, false);
      scatter_head(dv, h);
      for (std::size_t r = 0; r < L; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < L; ++j) dot += dprob[r * L + j] * p[r * L + j];
        for (std::size_t j = 0; j < L; ++j) {
          dprob[r * L + j] = p[r * L + j] * (dprob[r * L + j] - dot) * scale;
        }
      }
      gemm(Op::N, Op::T, {kt.data() + h * dh * L, dh, L, L}, {dprob.data(), L, L, L},
           {headt.data(), dh, L, L}, false);
      scatter_head(dq, h);
      gemm(Op::N, Op::N, {qt.data() + h * dh * L, dh, L, L}, {dprob.data(), L, L, L},
           {headt.data(), dh, L, L}, false);
      scatter_head(dk, h);
    }
    gemm(Op::T, Op::N, cm(lc.h1, L, d), cm(dq, L, d), mm(slice(grads, ls.wq), d, d), true);
    gemm(Op::T, Op::N, cm(lc.h1, L, d), cm(dk, L, d), mm(slice(grads, ls.wk), d, d), true);
    gemm(Op::T, Op::N, cm(lc.h1, L, d), cm(dv, L, d), mm(slice(grads, ls.wv), d, d), true);
    column_sums_into(dq, L, slice(grads, ls.bq));
    column_sums_into(dk, L, slice(grads, ls.bk));
    column_sums_into(dv, L, slice(grads, ls.bv));
    std::vector<double>& d_h1 = tmp_ld;
    gemm(Op::N, Op::T, cm(dq, L, d), cm(slice(params, ls.wq), d, d), mm(d_h1, L, d), false);
    gemm(Op::N, Op::T, cm(dk, L, d), cm(slice(params, ls.wk), d, d), mm(d_h1, L, d), true);
    gemm(Op::N, Op::T, cm(dv, L, d), cm(slice(params, ls.wv), d, d), mm(d_h1, L, d), true);
    ln_backward(d_h1, lc.ln1_hat, lc.ln1_rstd, L, d, slice(params, ls.ln1_g),
                slice(grads, ls.ln1_g), slice(grads, ls.ln1_b), dx);
  }

  // Input layer.
  if (std::holds_alternative<TokenEmbedding>(cfg.input)) {
    auto demb = slice(grads, s.embed);
    for (std::size_t r = 0; r < L; ++r) {
      const auto t = static_cast<std::size_t>(c.input[r]);
      for (std::size_t j = 0; j < d; ++j) demb[t * d + j] += dx[r * d + j];
    }
  } else {
    const auto d_in = std::get<LinearProjection>(cfg.input).d_in;
    gemm(Op::T, Op::N, cm(c.input, L, d_in), cm(dx, L, d), mm(slice(grads, s.in_w), d_in, d),
         true);
    column_sums_into(dx, L, slice(grads, s.in_b));
  }
}

ParameterSet encoder_backward(const ForwardCache& cache, const ParameterSet& params,
                              std::span<const double> output_grad) {
  ParameterSet grads(params.layout_ptr());
  encoder_backward(cache, params, output_grad, grads);
  return grads;
}

// ---------------------------------------------------------------- losses

LossValue cross_entropy(std::span<const double> logits, std::size_t target) {
  if (logits.empty() || target >= logits.size()) {
    throw Error("ShapeMismatch", "cross-entropy target outside logits");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  LossValue out;
  out.value = std::max(0.0, lse - logits[target]);
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.grad[i] = std::exp(logits[i] - lse) - (i == target ? 1.0 : 0.0);
  }
  return out;
}

LossValue mean_squared_error(std::span<const double> output, std::span<const double> target) {
  if (output.size() != target.size() || output.empty()) {
    throw Error("ShapeMismatch", "MSE output and target sizes differ");
  }
  const double n = static_cast<double>(output.size());
  LossValue out;
  out.grad.resize(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double e = output[i] - target[i];
    out.value += e * e;
    out.grad[i] = 2.0 * e / n;
  }
  out.value /= n;
  return out;
}

LossValue loss(const HeadMode& head, std::span<const double> output, const LossTarget& target) {
  if (std::holds_alternative<Classifier>(head)) {
    const auto* cls = std::get_if<std::size_t>(&target);
    if (!cls || output.size() != std::get<Classifier>(head).n_classes) {
      throw Error("ShapeMismatch", "classifier loss needs a class index and n_classes logits");
    }
    return cross_entropy(output, *cls);
  }
  const auto* vec = std::get_if<std::vector<double>>(&target);
  if (!vec || output.size() != std::get<Regressor>(head).d_out) {
    throw Error("ShapeMismatch", "regressor loss needs a d_out target vector");
  }
  return mean_squared_error(output, *vec);
}

// ---------------------------------------------------------------- dense layer

Tensor linear_forward(const Tensor& x, const Tensor& weight, std::span<const double> bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0) ||
      bias.size() != weight.dim(1)) {
    throw Error("ShapeMismatch", "linear layer shapes");
  }
  Tensor y = matmul(x, weight);
  for (std::size_t r = 0; r < y.dim(0); ++r) {
    for (std::size_t j = 0; j < y.dim(1); ++j) y(r, j) += bias[j];
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& d_output) {
  if (d_output.rank() != 2 || d_output.dim(0) != x.dim(0) || d_output.dim(1) != weight.dim(1)) {
    throw Error("ShapeMismatch", "linear layer gradient shapes");
  }
  const std::size_t b = x.dim(0), in = x.dim(1), out = weight.dim(1);
  LinearGrads g{Tensor({in, out}), std::vector<double>(out, 0.0), Tensor({b, in})};
  gemm(Op::T, Op::N, cm(x.values(), b, in), cm(d_output.values(), b, out),
       mm(g.d_weight.values(), in, out), false);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < out; ++j) g.d_bias[j] += d_output(r, j);
  }
  gemm(Op::N, Op::T, cm(d_output.values(), b, out), cm(weight.values(), in, out),
       mm(g.d_input.values(), b, in), false);
  return g;
}

// ---------------------------------------------------------------- serialization

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 8 > bytes.size()) throw Error("MalformedPayload", "truncated payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> serialize_parameters(const ParameterSet& params) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * params.size());
  put_u64_le(out, params.fingerprint());
  put_u64_le(out, params.size());
  for (double x : params.values()) put_u64_le(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

std::uint64_t payload_fingerprint(std::span<const std::uint8_t> bytes) {
  return get_u64_le(bytes, 0);
}

ParameterSet deserialize_parameters(std::span<const std::uint8_t> bytes,
                                    std::shared_ptr<const ParameterLayout> layout) {
  const std::uint64_t fp = get_u64_le(bytes, 0);
  if (fp != layout->fingerprint()) {
    throw Error("FingerprintMismatch", "payload was produced by a different model config");
  }
  const std::uint64_t n = get_u64_le(bytes, 8);
  if (n != layout->total_size() || bytes.size() != 16 + 8 * n) {
    throw Error("MalformedPayload", "parameter count does not match layout");
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = std::bit_cast<double>(get_u64_le(bytes, 16 + 8 * i));
  }
  return ParameterSet::unflatten(std::move(layout), std::move(values));
}

void save_parameters(const ParameterSet& params, const std::string& path) {
  const auto bytes = serialize_parameters(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParameterSet load_parameters(const std::string& path,
                             std::shared_ptr<const ParameterLayout> layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot read " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_parameters(bytes, std::move(layout));
}

}  // namespace fpott
