#pragma once

#include <cstddef>

// Row-major accumulating matrix products used by the dense and conv kernels.
namespace trustgan::detail {

/// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// C[m,n] = A[k,m]^T * B[k,n]
void gemm_tn_assign(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

}  // namespace trustgan::detail
