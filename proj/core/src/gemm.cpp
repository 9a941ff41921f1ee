#include "gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

// The vector helpers are always inlined into their callers.
#pragma GCC diagnostic ignored "-Wpsabi"

namespace trustgan::detail {

// Every kernel accumulates C[i,j] over p in increasing order starting from the
// stored value, so tiling and the instruction-set clones agree bit for bit.
// This file is compiled with -ffp-contract=off for the same reason.

namespace {

constexpr std::size_t kRows = 4;
constexpr std::size_t kCols = 8;

using Vec = double __attribute__((vector_size(32)));

[[gnu::always_inline]] inline Vec load(const double* p) {
    Vec v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

[[gnu::always_inline]] inline void store(double* p, Vec v) { std::memcpy(p, &v, sizeof v); }

// C[m,n] += A * B[k,n] where A(i,p) = a[i * si + p * sp]. kAssign starts from zero instead of C.
template <bool kAssign>
[[gnu::always_inline]] inline void gemm_kernel(std::size_t m, std::size_t n, std::size_t k, const double* a,
                                               std::size_t si, std::size_t sp, const double* b, double* c) {
    const std::size_t m_tiled = m - m % kRows;
    const std::size_t n_tiled = n - n % kCols;
    // Column stripes outermost: one stripe of B stays in cache across all row blocks.
    for (std::size_t j = 0; j < n_tiled; j += kCols) {
        for (std::size_t i = 0; i < m_tiled; i += kRows) {
            Vec acc[kRows][2];
            for (std::size_t r = 0; r < kRows; ++r) {
                acc[r][0] = kAssign ? Vec{} : load(c + (i + r) * n + j);
                acc[r][1] = kAssign ? Vec{} : load(c + (i + r) * n + j + 4);
            }
            for (std::size_t p = 0; p < k; ++p) {
                const Vec b0 = load(b + p * n + j);
                const Vec b1 = load(b + p * n + j + 4);
                for (std::size_t r = 0; r < kRows; ++r) {
                    const double av = a[(i + r) * si + p * sp];
                    acc[r][0] += av * b0;
                    acc[r][1] += av * b1;
                }
            }
            for (std::size_t r = 0; r < kRows; ++r) {
                store(c + (i + r) * n + j, acc[r][0]);
                store(c + (i + r) * n + j + 4, acc[r][1]);
            }
        }
    }
    for (std::size_t i = 0; i < m_tiled; ++i) {
        for (std::size_t j = n_tiled; j < n; ++j) {
            double acc = kAssign ? 0.0 : c[i * n + j];
            for (std::size_t p = 0; p < k; ++p) acc += a[i * si + p * sp] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
    for (std::size_t i = m_tiled; i < m; ++i) {
        double* ci = c + i * n;
        if (kAssign) std::fill(ci, ci + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * si + p * sp];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace

[[gnu::target_clones("avx2", "default")]]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    gemm_kernel<false>(m, n, k, a, k, 1, b, c);
}

[[gnu::target_clones("avx2", "default")]]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    gemm_kernel<false>(m, n, k, a, 1, m, b, c);
}

[[gnu::target_clones("avx2", "default")]]
void gemm_tn_assign(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    gemm_kernel<true>(m, n, k, a, 1, m, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    constexpr std::size_t kBlock = 16;
    thread_local std::vector<double> bt;
    bt.resize(k * n);
    for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
        const std::size_t j1 = std::min(n, j0 + kBlock);
        for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
            const std::size_t p1 = std::min(k, p0 + kBlock);
            for (std::size_t j = j0; j < j1; ++j)
                for (std::size_t p = p0; p < p1; ++p) bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace trustgan::detail
