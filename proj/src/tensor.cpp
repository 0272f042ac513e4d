#include "fpott/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "fpott/error.hpp"
#include "fpott/kernels.hpp"

namespace fpott {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw Error("ShapeMismatch", "tensor dimensions must be positive");
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_) {
    if (d == 0) throw Error("ShapeMismatch", "tensor dimensions must be positive");
  }
  if (values_.size() != product(shape_)) {
    throw Error("ShapeMismatch", std::to_string(values_.size()) + " values for shape " +
                                     shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error("ShapeMismatch",
                "matmul " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  kernels::parallel::gemm(kernels::Op::N, kernels::Op::N,
                          {a.values().data(), a.dim(0), a.dim(1), a.dim(1)},
                          {b.values().data(), b.dim(0), b.dim(1), b.dim(1)},
                          {c.values().data(), c.dim(0), c.dim(1), c.dim(1)}, false);
  return c;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw Error("ShapeMismatch", "softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);

  Tensor y = x;
  auto v = y.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = v[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[base + i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double& e = v[base + i * inner];
        e = std::exp(e - mx);
        sum += e;
      }
      for (std::size_t i = 0; i < n; ++i) v[base + i * inner] /= sum;
    }
  }
  return y;
}

Tensor layer_norm(const Tensor& x, std::span<const double> gain, std::span<const double> bias,
                  double eps) {
  if (x.rank() == 0) throw Error("ShapeMismatch", "layer_norm of a scalar");
  const std::size_t n = x.shape().back();
  if (gain.size() != n || bias.size() != n) {
    throw Error("ShapeMismatch", "layer_norm gain/bias length differs from last axis");
  }
  Tensor y = x;
  auto v = y.values();
  for (std::size_t base = 0; base < v.size(); base += n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += v[base + i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (v[base + i] - mean) * (v[base + i] - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      v[base + i] = gain[i] * ((v[base + i] - mean) * rstd) + bias[i];
    }
  }
  return y;
}

}  // namespace fpott
