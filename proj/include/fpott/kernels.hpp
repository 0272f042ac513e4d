#pragma once

// Dense row-major GEMM kernels over strided matrix views. `reference` is the
// plain triple loop kept as the test oracle; `parallel` is the OpenMP kernel
// the engine runs. Both accumulate every output element in ascending inner
// index order, so for beta = 0 their results are bitwise identical and
// independent of the thread count.

#include <cstddef>

namespace fpott::kernels {

struct ConstMatrixRef {
  const double* data;
  std::size_t rows;
  std::size_t cols;
  std::size_t stride;

  double operator()(std::size_t r, std::size_t c) const { return data[r * stride + c]; }
};

struct MatrixRef {
  double* data;
  std::size_t rows;
  std::size_t cols;
  std::size_t stride;

  double& operator()(std::size_t r, std::size_t c) const { return data[r * stride + c]; }
  operator ConstMatrixRef() const { return {data, rows, cols, stride}; }
};

enum class Op { N, T };

namespace reference {
// C = op(A) * op(B) (+ C when accumulate). Throws "ShapeMismatch".
void gemm(Op op_a, Op op_b, ConstMatrixRef a, ConstMatrixRef b, MatrixRef c, bool accumulate);
}  // namespace reference

namespace parallel {
void gemm(Op op_a, Op op_b, ConstMatrixRef a, ConstMatrixRef b, MatrixRef c, bool accumulate);

// Caps the OpenMP team size from FPOTT_THREADS when set; returns the cap in
// effect.
int configure_threads_from_env();
int max_threads();
}  // namespace parallel

}  // namespace fpott::kernels
