#pragma once

#include <cstddef>

namespace mcqa::kernels {

// Row-major dense products. Every variant sums the inner dimension in
// ascending order for each output element, so the serial and OpenMP paths
// produce bitwise-identical results.
//
//   gemm:    C(m x n) (+)= A(m x k) * B(k x n)
//   gemm_tn: C(m x n) (+)= A^T * B, with A stored k x m and B stored k x n
//   gemm_nt: C(m x n) (+)= A * B^T, with A stored m x k and B stored n x k

namespace serial {
template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
}  // namespace serial

namespace omp {
template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
}  // namespace omp

/// Products below this many multiply-adds always run serially.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 18;

/// True when an OpenMP team could be launched from the calling context.
bool parallel_available();

/// Number of threads an OpenMP region would use; 1 without OpenMP.
int max_threads();

template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate = false) {
  if (m * k * n >= kParallelThreshold && parallel_available()) {
    omp::gemm(m, k, n, a, b, c, accumulate);
  } else {
    serial::gemm(m, k, n, a, b, c, accumulate);
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate = false) {
  if (m * k * n >= kParallelThreshold && parallel_available()) {
    omp::gemm_tn(m, k, n, a, b, c, accumulate);
  } else {
    serial::gemm_tn(m, k, n, a, b, c, accumulate);
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate = false) {
  if (m * k * n >= kParallelThreshold && parallel_available()) {
    omp::gemm_nt(m, k, n, a, b, c, accumulate);
  } else {
    serial::gemm_nt(m, k, n, a, b, c, accumulate);
  }
}

}  // namespace mcqa::kernels
