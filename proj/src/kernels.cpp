#include "mcqa/kernels.hpp"

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mcqa::kernels {

bool parallel_available() {
#ifdef _OPENMP
  return omp_get_max_threads() > 1 && !omp_in_parallel();
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

template <typename T>
inline void gemm_row(std::size_t i, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
                     bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
  }
  const T* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T av = arow[p];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

template <typename T>
inline void gemm_tn_row(std::size_t i, std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b,
                        T* c, bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a[p * m + i];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

template <typename T>
std::vector<T> transpose(std::size_t rows, std::size_t cols, const T* src) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

}  // namespace

namespace serial {

template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(i, k, n, a, b, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T{0};
  }
  // p-outer streams both inputs row by row; per-element order is still p ascending.
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  const std::vector<T> bt = transpose(n, k, b);
  gemm(m, k, n, a, bt.data(), c, accumulate);
}

}  // namespace serial

namespace omp {

template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) gemm_row(static_cast<std::size_t>(i), k, n, a, b, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) {
    gemm_tn_row(static_cast<std::size_t>(i), m, k, n, a, b, c, accumulate);
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  const std::vector<T> bt = transpose(n, k, b);
  gemm(m, k, n, a, bt.data(), c, accumulate);
}

}  // namespace omp

#define MCQA_INSTANTIATE_KERNELS(T)                                                                   \
  template void serial::gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);    \
  template void serial::gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void serial::gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void omp::gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);       \
  template void omp::gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);    \
  template void omp::gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);

MCQA_INSTANTIATE_KERNELS(float)
MCQA_INSTANTIATE_KERNELS(double)

#undef MCQA_INSTANTIATE_KERNELS

}  // namespace mcqa::kernels
