#include <omp.h>

#include <cstdlib>
#include <string>

#include "fpott/error.hpp"
#include "fpott/kernels.hpp"

namespace fpott::kernels {

namespace detail {
void check_gemm_shapes(Op op_a, Op op_b, ConstMatrixRef a, ConstMatrixRef b, MatrixRef c);
}

namespace parallel {

namespace {

// c[0..n) += a * b[0..n)
inline void axpy_row(double* __restrict c, double a, const double* __restrict b, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
}

// Below this many multiply-adds a team spin-up costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 16;

bool go_parallel(std::size_t work) { return work >= kParallelWork && !omp_in_parallel(); }

}  // namespace

void gemm(Op op_a, Op op_b, ConstMatrixRef a, ConstMatrixRef b, MatrixRef c, bool accumulate) {
  detail::check_gemm_shapes(op_a, op_b, a, b, c);
  const std::size_t m = c.rows;
  const std::size_t n = c.cols;
  const std::size_t inner = op_a == Op::N ? a.cols : a.rows;
  const auto rows = static_cast<std::ptrdiff_t>(m);
  const bool par = go_parallel(m * n * inner);

  if (op_a == Op::N && op_b == Op::N) {
#pragma omp parallel for if (par) schedule(static)
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      double* crow = c.data + i * c.stride;
      if (!accumulate) {
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
      }
      const double* arow = a.data + i * a.stride;
      for (std::size_t k = 0; k < inner; ++k) {
        const double aik = arow[k];
        axpy_row(crow, aik, b.data + k * b.stride, n);
      }
    }
  } else if (op_a == Op::N && op_b == Op::T) {
#pragma omp parallel for if (par) schedule(static)
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const double* arow = a.data + i * a.stride;
      double* crow = c.data + i * c.stride;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b.data + j * b.stride;
        double acc = 0.0;
        for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
        crow[j] = accumulate ? crow[j] + acc : acc;
      }
    }
  } else if (op_a == Op::T && op_b == Op::N) {
#pragma omp parallel for if (par) schedule(static)
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      double* crow = c.data + i * c.stride;
      if (!accumulate) {
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
      }
      for (std::size_t k = 0; k < inner; ++k) {
        const double aki = a.data[k * a.stride + i];
        if (aki == 0.0) continue;
        axpy_row(crow, aki, b.data + k * b.stride, n);
      }
    }
  } else {
    throw Error("ShapeMismatch", "gemm with both operands transposed is not supported");
  }
}

int configure_threads_from_env() {
  if (const char* env = std::getenv("FPOTT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
  return omp_get_max_threads();
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace parallel
}  // namespace fpott::kernels
