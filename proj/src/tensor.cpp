#include "stegattn/tensor.hpp"

#include <cassert>
#include <cmath>

namespace stegattn {

Matrix matmul(const Matrix& a, const Matrix& b) {
    assert(a.cols == b.rows);
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* __restrict__ out = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double s = a(i, k);
            const double* __restrict__ brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) out[j] += s * brow[j];
        }
    }
    return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    assert(a.rows == b.rows);
    Matrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* __restrict__ brow = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double s = a(k, i);
            double* __restrict__ out = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) out[j] += s * brow[j];
        }
    }
    return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    assert(a.cols == b.cols);
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* __restrict__ arow = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* __restrict__ brow = b.data.data() + j * b.cols;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            c(i, j) = acc;
        }
    }
    return c;
}

bool all_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace stegattn
