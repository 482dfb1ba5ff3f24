#pragma once

#include <cblas.h>

#include <cstddef>

#include "t4t/array.hpp"

namespace t4t {

// Row-major C = alpha * op(A) * op(B) + beta * C.
template <Scalar T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, const T* b, T beta, T* c) {
  if (m == 0 || n == 0) return;
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
  const int lda = static_cast<int>(trans_a ? m : k);
  const int ldb = static_cast<int>(trans_b ? k : n);
  const int ldc = static_cast<int>(n);
  if (k == 0) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = beta == T(0) ? T(0) : beta * c[i];
    return;
  }
  if constexpr (std::same_as<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

// Pins the BLAS backend to one thread so every output element has a fixed
// reduction order. Kernels written here are single-threaded already.
inline void set_deterministic(bool on) {
  if (on) openblas_set_num_threads(1);
}

}  // namespace t4t
