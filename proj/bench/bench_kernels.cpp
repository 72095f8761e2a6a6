// Serial reference kernels against the blocked OpenMP versions, on the
// shapes the denoiser and the retrieval scan actually use.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "retrodiff/kernels.hpp"

namespace k = retrodiff::kernels;

namespace {

std::vector<float> randn(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// m × k times k × n; args are (m, n, k).
template <bool Parallel>
void BM_MatmulNN(benchmark::State& state) {
  const auto m = std::size_t(state.range(0)), n = std::size_t(state.range(1)), kk = std::size_t(state.range(2));
  const auto a = randn(m * kk, 1), b = randn(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::matmul_nn<float>(m, n, kk, a, b, c);
    else
      k::reference::matmul_nn<float>(m, n, kk, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * m * n * kk));
}

template <bool Parallel>
void BM_MatmulNT(benchmark::State& state) {
  const auto m = std::size_t(state.range(0)), n = std::size_t(state.range(1)), kk = std::size_t(state.range(2));
  const auto a = randn(m * kk, 3), b = randn(n * kk, 4);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::matmul_nt<float>(m, n, kk, a, b, c);
    else
      k::reference::matmul_nt<float>(m, n, kk, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * m * n * kk));
}

template <bool Parallel>
void BM_MatmulTN(benchmark::State& state) {
  const auto m = std::size_t(state.range(0)), n = std::size_t(state.range(1)), kk = std::size_t(state.range(2));
  const auto a = randn(kk * m, 5), b = randn(kk * n, 6);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::matmul_tn<float>(m, n, kk, a, b, c);
    else
      k::reference::matmul_tn<float>(m, n, kk, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * m * n * kk));
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto rows = std::size_t(state.range(0)), cols = std::size_t(state.range(1));
  const auto x = randn(rows * cols, 7);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::softmax_rows<float>(rows, cols, x, y);
    else
      k::reference::softmax_rows<float>(rows, cols, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_DotScan(benchmark::State& state) {
  const auto n = std::size_t(state.range(0)), d = std::size_t(32);
  const auto rows = randn(n * d, 8), q = randn(d, 9);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::dot_scan(n, d, rows, q, out);
    else
      k::reference::dot_scan(n, d, rows, q, out);
    benchmark::DoNotOptimize(out.data());
  }
}

// 64 tokens at width 128; cross-attention against k=10 audio+text memory.
void matmul_shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 128, 64})->Args({64, 128, 128})->Args({64, 256, 128})->Args({64, 650, 32})->Args({256, 256, 256});
}

}  // namespace

BENCHMARK(BM_MatmulNN<false>)->Apply(matmul_shapes);
BENCHMARK(BM_MatmulNN<true>)->Apply(matmul_shapes);
BENCHMARK(BM_MatmulNT<false>)->Apply(matmul_shapes);
BENCHMARK(BM_MatmulNT<true>)->Apply(matmul_shapes);
BENCHMARK(BM_MatmulTN<false>)->Apply(matmul_shapes);
BENCHMARK(BM_MatmulTN<true>)->Apply(matmul_shapes);
BENCHMARK(BM_Softmax<false>)->Args({256, 64})->Args({256, 650});
BENCHMARK(BM_Softmax<true>)->Args({256, 64})->Args({256, 650});
BENCHMARK(BM_DotScan<false>)->Arg(5000)->Arg(100000);
BENCHMARK(BM_DotScan<true>)->Arg(5000)->Arg(100000);

BENCHMARK_MAIN();
