#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stegattn {

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }

    bool operator==(const Matrix&) const = default;
};

// a (n x k) * b (k x m)
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T (k x n)^T * b (k x m) -> n x m
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
// a (n x k) * b^T (m x k)^T -> n x m
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

bool all_finite(std::span<const double> values);

}  // namespace stegattn
