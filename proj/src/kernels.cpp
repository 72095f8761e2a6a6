#include "retrodiff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "retrodiff/error.hpp"

namespace retrodiff::kernels {

namespace {

constexpr std::size_t kParallelWork = std::size_t{1} << 16;

void check_extent(std::size_t have, std::size_t want, const char* what) {
  if (have < want) throw DimensionError(std::string("kernel buffer too small: ") + what);
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t tile = 16;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile)
    for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
      const std::size_t i1 = std::min(rows, i0 + tile), j1 = std::min(cols, j0 + tile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
}

template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[2];
  return buffers[slot];
}

// 4 × W tile of c held in registers across the whole k loop.
template <typename T>
void nn_tile(std::size_t i, std::size_t j0, std::size_t n, std::size_t k, const T* __restrict a,
             const T* __restrict b, T* __restrict c) {
  constexpr std::size_t W = 128 / sizeof(T);
  T acc0[W] = {}, acc1[W] = {}, acc2[W] = {}, acc3[W] = {};
  const T* a0 = a + i * k;
  const T* a1 = a0 + k;
  const T* a2 = a1 + k;
  const T* a3 = a2 + k;
  for (std::size_t p = 0; p < k; ++p) {
    const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
    const T* __restrict bp = b + p * n + j0;
#pragma omp simd
    for (std::size_t j = 0; j < W; ++j) {
      const T bj = bp[j];
      acc0[j] += x0 * bj;
      acc1[j] += x1 * bj;
      acc2[j] += x2 * bj;
      acc3[j] += x3 * bj;
    }
  }
  T* c0 = c + i * n + j0;
#pragma omp simd
  for (std::size_t j = 0; j < W; ++j) {
    c0[j] += acc0[j];
    c0[n + j] += acc1[j];
    c0[2 * n + j] += acc2[j];
    c0[3 * n + j] += acc3[j];
  }
}

// Four output rows share every load of a `b` row; columns [j0, n).
template <typename T>
void nn_rows(std::size_t i, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  constexpr std::size_t W = 128 / sizeof(T);
  std::size_t j0 = 0;
  for (; j0 + W <= n; j0 += W) nn_tile(i, j0, n, k, a, b, c);
  if (j0 == n) return;
  T* c0 = c + i * n;
  T* c1 = c0 + n;
  T* c2 = c1 + n;
  T* c3 = c2 + n;
  const T* a0 = a + i * k;
  const T* a1 = a0 + k;
  const T* a2 = a1 + k;
  const T* a3 = a2 + k;
  for (std::size_t p = 0; p < k; ++p) {
    const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
    const T* __restrict bp = b + p * n;
#pragma omp simd
    for (std::size_t j = j0; j < n; ++j) {
      const T bj = bp[j];
      c0[j] += x0 * bj;
      c1[j] += x1 * bj;
      c2[j] += x2 * bj;
      c3[j] += x3 * bj;
    }
  }
}

template <typename T>
void nn_row(std::size_t i, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
            T* __restrict c) {
  T* ci = c + i * n;
  const T* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T x = ai[p];
    const T* __restrict bp = b + p * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) ci[j] += x * bp[j];
  }
}

template <typename T>
void nn_kernel(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  const std::size_t blocks = m / 4;
  const bool parallel = m * n * k >= kParallelWork && blocks > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t blk = 0; blk < blocks; ++blk) nn_rows(blk * 4, n, k, a, b, c);
  for (std::size_t i = blocks * 4; i < m; ++i) nn_row(i, n, k, a, b, c);
}

}  // namespace

template <typename T>
void matmul_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
               std::span<T> c, bool accumulate) {
  check_extent(a.size(), m * k, "a");
  check_extent(b.size(), k * n, "b");
  check_extent(c.size(), m * n, "c");
  nn_kernel(m, n, k, a.data(), b.data(), c.data(), accumulate);
}

template <typename T>
void matmul_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
               std::span<T> c, bool accumulate) {
  check_extent(a.size(), m * k, "a");
  check_extent(b.size(), n * k, "b");
  check_extent(c.size(), m * n, "c");
  auto& bt = scratch<T>(0);
  bt.resize(n * k);
  transpose(n, k, b.data(), bt.data());
  nn_kernel(m, n, k, a.data(), bt.data(), c.data(), accumulate);
}

template <typename T>
void matmul_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
               std::span<T> c, bool accumulate) {
  check_extent(a.size(), k * m, "a");
  check_extent(b.size(), k * n, "b");
  check_extent(c.size(), m * n, "c");
  auto& at = scratch<T>(1);
  at.resize(m * k);
  transpose(k, m, a.data(), at.data());
  nn_kernel(m, n, k, at.data(), b.data(), c.data(), accumulate);
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> x, std::span<T> y) {
  check_extent(x.size(), rows * cols, "x");
  check_extent(y.size(), rows * cols, "y");
  const bool parallel = rows * cols >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * cols;
    T* yr = y.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, xr[j]);
    T sum = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void dot_scan(std::size_t n, std::size_t d, std::span<const float> rows, std::span<const float> query,
              std::span<double> out) {
  check_extent(rows.size(), n * d, "rows");
  check_extent(query.size(), d, "query");
  check_extent(out.size(), n, "out");
  const bool parallel = n * d >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t i = 0; i < n; ++i) {
    const float* r = rows.data() + i * d;
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += double(r[j]) * double(query[j]);
    out[i] = s;
  }
}

namespace reference {

template <typename T>
void matmul_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
               std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

template <typename T>
void matmul_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
               std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

template <typename T>
void matmul_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
               std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> x, std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = x[r * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    T sum = 0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[r * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - mx) / sum;
  }
}

void dot_scan(std::size_t n, std::size_t d, std::span<const float> rows, std::span<const float> query,
              std::span<double> out) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += double(rows[i * d + j]) * double(query[j]);
    out[i] = s;
  }
}

#define RETRODIFF_INSTANTIATE(T)                                                                       \
  template void matmul_nn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>, \
                             std::span<T>, bool);                                                      \
  template void matmul_nt<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>, \
                             std::span<T>, bool);                                                      \
  template void matmul_tn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>, \
                             std::span<T>, bool);                                                      \
  template void softmax_rows<T>(std::size_t, std::size_t, std::span<const T>, std::span<T>);

RETRODIFF_INSTANTIATE(float)
RETRODIFF_INSTANTIATE(double)

}  // namespace reference

RETRODIFF_INSTANTIATE(float)
RETRODIFF_INSTANTIATE(double)
#undef RETRODIFF_INSTANTIATE

}  // namespace retrodiff::kernels
