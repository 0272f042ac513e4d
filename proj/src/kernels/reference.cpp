#include <string>

#include "fpott/error.hpp"
#include "fpott/kernels.hpp"

namespace fpott::kernels {

namespace detail {
void check_gemm_shapes(Op op_a, Op op_b, ConstMatrixRef a, ConstMatrixRef b, MatrixRef c) {
  const std::size_t am = op_a == Op::N ? a.rows : a.cols;
  const std::size_t ak = op_a == Op::N ? a.cols : a.rows;
  const std::size_t bk = op_b == Op::N ? b.rows : b.cols;
  const std::size_t bn = op_b == Op::N ? b.cols : b.rows;
  if (ak != bk || am != c.rows || bn != c.cols) {
    throw Error("ShapeMismatch", "gemm " + std::to_string(am) + "x" + std::to_string(ak) +
                                     " by " + std::to_string(bk) + "x" + std::to_string(bn) +
                                     " into " + std::to_string(c.rows) + "x" +
                                     std::to_string(c.cols));
  }
}
}  // namespace detail

namespace reference {

void gemm(Op op_a, Op op_b, ConstMatrixRef a, ConstMatrixRef b, MatrixRef c, bool accumulate) {
  detail::check_gemm_shapes(op_a, op_b, a, b, c);
  const std::size_t inner = op_a == Op::N ? a.cols : a.rows;
  auto at = [&](std::size_t i, std::size_t k) { return op_a == Op::N ? a(i, k) : a(k, i); };
  auto bt = [&](std::size_t k, std::size_t j) { return op_b == Op::N ? b(k, j) : b(j, k); };
  for (std::size_t i = 0; i < c.rows; ++i) {
    for (std::size_t j = 0; j < c.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += at(i, k) * bt(k, j);
      c(i, j) = accumulate ? c(i, j) + acc : acc;
    }
  }
}

}  // namespace reference
}  // namespace fpott::kernels
