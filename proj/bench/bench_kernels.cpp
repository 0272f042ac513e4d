#include <benchmark/benchmark.h>

#include <vector>

#include "fpott/kernels.hpp"
#include "fpott/rng.hpp"

using fpott::kernels::Op;

namespace {

struct Operands {
  std::vector<double> a, b, c;
  explicit Operands(std::size_t n) : a(n * n), b(n * n), c(n * n) {
    fpott::Rng rng(1);
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
  }
};

void run_gemm(benchmark::State& state, bool parallel, Op oa, Op ob) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Operands m(n);
  for (auto _ : state) {
    if (parallel) {
      fpott::kernels::parallel::gemm(oa, ob, {m.a.data(), n, n, n}, {m.b.data(), n, n, n},
                                     {m.c.data(), n, n, n}, false);
    } else {
      fpott::kernels::reference::gemm(oa, ob, {m.a.data(), n, n, n}, {m.b.data(), n, n, n},
                                      {m.c.data(), n, n, n}, false);
    }
    benchmark::DoNotOptimize(m.c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

void BM_Reference(benchmark::State& state, Op oa, Op ob) { run_gemm(state, false, oa, ob); }
void BM_Parallel(benchmark::State& state, Op oa, Op ob) { run_gemm(state, true, oa, ob); }

}  // namespace

BENCHMARK_CAPTURE(BM_Reference, reference_nn, Op::N, Op::N)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK_CAPTURE(BM_Parallel, parallel_nn, Op::N, Op::N)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK_CAPTURE(BM_Reference, reference_nt, Op::N, Op::T)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK_CAPTURE(BM_Parallel, parallel_nt, Op::N, Op::T)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK_CAPTURE(BM_Reference, reference_tn, Op::T, Op::N)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK_CAPTURE(BM_Parallel, parallel_tn, Op::T, Op::N)->RangeMultiplier(4)->Range(16, 256);

BENCHMARK_MAIN();
