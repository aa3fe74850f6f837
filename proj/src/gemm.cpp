#include "gemm.hpp"

#include <cblas.h>

namespace coughgan::nn::detail {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, double beta) {
  if (!m || !n) return;
  if (!k) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, a, int(k), b, int(n), beta, c,
              int(n));
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, double beta) {
  if (!m || !n) return;
  if (!k) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, a, int(m), b, int(n), beta, c,
              int(n));
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, double beta) {
  if (!m || !n) return;
  if (!k) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(m), int(n), int(k), 1.0, a, int(k), b, int(k), beta, c,
              int(n));
}

}  // namespace coughgan::nn::detail
