#pragma once

// Register-blocked products for the per-head attention matrices. Sizes are
// small (T up to ~100, head_dim 32), so there is no packing; tiles of
// MR rows by NR columns live in registers for the whole inner loop.

#include <cstddef>
#include <cstring>

namespace stegattn::detail {

inline constexpr std::size_t kPadTo = 8;

inline std::size_t padded(std::size_t n) { return (n + kPadTo - 1) / kPadTo * kPadTo; }

using Lanes = double __attribute__((vector_size(64)));
inline constexpr std::size_t kLanes = sizeof(Lanes) / sizeof(double);

inline Lanes load(const double* p) {
    Lanes v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store(double* p, Lanes v) { std::memcpy(p, &v, sizeof v); }

// Trans: A is stored K x M (lda >= M); otherwise M x K (lda >= K).
// NR is a multiple of kLanes or 1.
template <std::size_t MR, std::size_t NR, bool Trans>
inline void gemm_tile(std::size_t k_len, const double* __restrict__ a, std::size_t lda, const double* __restrict__ b,
                      std::size_t ldb, double* __restrict__ c, std::size_t ldc) {
    // Stride to the next k in A and to the next row of the tile.
    const std::size_t step_k = Trans ? lda : 1;
    const std::size_t step_i = Trans ? 1 : lda;
    if constexpr (NR == 1) {
        double acc[MR] = {};
        for (std::size_t p = 0; p < k_len; ++p) {
            for (std::size_t i = 0; i < MR; ++i) acc[i] += a[p * step_k + i * step_i] * b[p * ldb];
        }
        for (std::size_t i = 0; i < MR; ++i) c[i * ldc] = acc[i];
    } else {
        constexpr std::size_t nv = NR / kLanes;
        Lanes acc[MR][nv] = {};
        for (std::size_t p = 0; p < k_len; ++p) {
            const double* bp = b + p * ldb;
            Lanes bv[nv];
            for (std::size_t v = 0; v < nv; ++v) bv[v] = load(bp + v * kLanes);
            const double* ap = a + p * step_k;
            for (std::size_t i = 0; i < MR; ++i) {
                const double ai = ap[i * step_i];
                for (std::size_t v = 0; v < nv; ++v) acc[i][v] += ai * bv[v];
            }
        }
        for (std::size_t i = 0; i < MR; ++i) {
            for (std::size_t v = 0; v < nv; ++v) store(c + i * ldc + v * kLanes, acc[i][v]);
        }
    }
}

template <std::size_t MR, bool Trans>
inline void gemm_rows(std::size_t n, std::size_t k_len, const double* a, std::size_t lda, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) gemm_tile<MR, 16, Trans>(k_len, a, lda, b + j, ldb, c + j, ldc);
    for (; j + 8 <= n; j += 8) gemm_tile<MR, 8, Trans>(k_len, a, lda, b + j, ldb, c + j, ldc);
    for (; j < n; ++j) gemm_tile<MR, 1, Trans>(k_len, a, lda, b + j, ldb, c + j, ldc);
}

/// C (M x N) = op(A) * B with B stored K x N, all row-major. op(A) = A
/// (M x K) or, when Trans, the transpose of A stored K x M. C is overwritten.
template <bool Trans>
void gemm(std::size_t m, std::size_t n, std::size_t k_len, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        gemm_rows<4, Trans>(n, k_len, Trans ? a + i : a + i * lda, lda, b, ldb, c + i * ldc, ldc);
    }
    for (; i < m; ++i) gemm_rows<1, Trans>(n, k_len, Trans ? a + i : a + i * lda, lda, b, ldb, c + i * ldc, ldc);
}

/// dst (cols x ld_dst) = transpose of src (rows x cols, ld_src); columns
/// rows..ld_dst of dst are zeroed.
inline void transpose_padded(const double* src, std::size_t rows, std::size_t cols, std::size_t ld_src, double* dst,
                             std::size_t ld_dst) {
    for (std::size_t j = 0; j < cols; ++j) {
        double* d = dst + j * ld_dst;
        for (std::size_t i = 0; i < rows; ++i) d[i] = src[i * ld_src + j];
        for (std::size_t i = rows; i < ld_dst; ++i) d[i] = 0.0;
    }
}

}  // namespace stegattn::detail
