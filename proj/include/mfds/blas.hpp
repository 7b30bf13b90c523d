#pragma once

#include <cstdlib>
#include <string>

extern "C" {
void cblas_sgemm(int order, int transA, int transB, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta, float* c, int ldc);
void cblas_dgemm(int order, int transA, int transB, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta, double* c,
                 int ldc);
void openblas_set_num_threads(int n);
}

namespace mfds {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(101, trans_a ? 112 : 111, trans_b ? 112 : 111, m, n, k, alpha, a, lda, b, ldb, beta,
              c, ldc);
}
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                 int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(101, trans_a ? 112 : 111, trans_b ? 112 : 111, m, n, k, alpha, a, lda, b, ldb, beta,
              c, ldc);
}

// Caps BLAS parallelism. MFDS_NUM_THREADS=1 (the default) keeps all math
// single-threaded so training runs are bit-reproducible.
inline int configure_math_threads() {
  int threads = 1;
  if (const char* env = std::getenv("MFDS_NUM_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) threads = v;
  }
  openblas_set_num_threads(threads);
  return threads;
}

}  // namespace mfds
