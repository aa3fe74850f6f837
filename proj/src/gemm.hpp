#pragma once

#include <cstddef>

// Row-major dense kernels: C = A * B + beta * C.
namespace coughgan::nn::detail {

/// C[m x n] = A[m x k] * B[k x n] + beta * C
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta = 1.0);

/// C[m x n] = A^T * B + beta * C, with A stored k x m.
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta = 1.0);

/// C[m x n] = A * B^T + beta * C, with B stored n x k.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta = 1.0);

}  // namespace coughgan::nn::detail
