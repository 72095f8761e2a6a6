#pragma once

// Dense numeric kernels on row-major buffers.
//
// Every kernel exists twice: a plain serial loop nest in `reference` that the
// tests use as an oracle, and a blocked OpenMP version at namespace scope used
// by the library. The parallel versions split work over output rows only, so
// each output element is accumulated by one thread in a fixed order and
// results are bit-identical for any thread count.

#include <cstddef>
#include <span>

namespace retrodiff::kernels {

// c[m×n] (+)= a[m×k] · b[k×n]
template <typename T>
void matmul_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
               std::span<const T> b, std::span<T> c, bool accumulate = false);

// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
template <typename T>
void matmul_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
               std::span<const T> b, std::span<T> c, bool accumulate = false);

// c[m×n] (+)= a[k×m]ᵀ · b[k×n]
template <typename T>
void matmul_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
               std::span<const T> b, std::span<T> c, bool accumulate = false);

// Row-wise softmax with max subtraction. `y` may alias `x`.
template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> x, std::span<T> y);

// out[i] = <rows[i], query> for an n×d matrix, accumulated in double.
void dot_scan(std::size_t n, std::size_t d, std::span<const float> rows, std::span<const float> query,
              std::span<double> out);

namespace reference {

template <typename T>
void matmul_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
               std::span<const T> b, std::span<T> c, bool accumulate = false);
template <typename T>
void matmul_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
               std::span<const T> b, std::span<T> c, bool accumulate = false);
template <typename T>
void matmul_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
               std::span<const T> b, std::span<T> c, bool accumulate = false);
template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> x, std::span<T> y);
void dot_scan(std::size_t n, std::size_t d, std::span<const float> rows, std::span<const float> query,
              std::span<double> out);
}  // namespace reference

}  // namespace retrodiff::kernels
