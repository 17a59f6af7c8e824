// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "dualsft/error.hpp"

namespace dualsft {

using Vec = std::vector<double>;

/// Dense row-major real matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// All reductions below accumulate in ascending index order.

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double sum(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x;
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(std::span<const double> a) {
    double m = 0.0;
    for (double x : a) m = std::max(m, std::abs(x));
    return m;
}

inline Vec add(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Vec sub(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Vec scaled(std::span<const double> a, double s) {
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
    return out;
}

inline Vec hadamard(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec matvec(const Matrix& m, std::span<const double> x) {
    assert(m.cols() == x.size());
    Vec out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
    return out;
}

/// Column sums of a matrix, rows visited in ascending order.
inline Vec column_sums(const Matrix& m) {
    Vec out(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, m.row(r), out);
    return out;
}

inline Vec row_sums(const Matrix& m) {
    Vec out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = sum(m.row(r));
    return out;
}

inline void symmetrize(Matrix& m) {
    assert(m.rows() == m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.cols(); ++j) {
            const double avg = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = avg;
            m(j, i) = avg;
        }
}

inline bool all_finite(std::span<const double> a) {
    return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

/// Shortest round-tripping decimal form used by every text writer.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Spectral norm of a symmetric matrix by power iteration.
///
/// Starts from a fixed deterministic vector so repeated calls agree bitwise.
/// Stops after `max_iter` iterations or when the Rayleigh estimate changes by
/// less than `tol` relative.
inline double symmetric_op_norm(const Matrix& a, int max_iter = 64, double tol = 1e-8) {
    const std::size_t n = a.rows();
    if (n == 0) return 0.0;
    Vec x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = 1.0 + 0.5 * std::sin(static_cast<double>(i) + 1.0);
    double nx = norm2(x);
    for (double& xi : x) xi /= nx;

    double estimate = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vec y = matvec(a, x);
        const double ny = norm2(y);
        if (ny == 0.0) return estimate;
        const double prev = estimate;
        estimate = ny;
        for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / ny;
        if (it > 0 && std::abs(estimate - prev) <= tol * estimate) break;
    }
    return estimate;
}

} // namespace dualsft
