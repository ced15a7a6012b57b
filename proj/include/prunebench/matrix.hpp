#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace prunebench {

// Dense row-major matrix of doubles. Weights are stored as f32 on disk but all
// arithmetic happens here in f64.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw error(errc::dimension_mismatch,
                        "matrix data length " + std::to_string(data_.size()) + " does not match shape " +
                            std::to_string(rows_) + "x" + std::to_string(cols_));
        }
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) {
                throw error(errc::dimension_mismatch, "ragged matrix literal");
            }
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw error(errc::dimension_mismatch,
                    "matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
        }
    }
    return out;
}

// x * w^T, the layout of a linear layer whose weight is (out_features x in_features).
inline Matrix matmul_transposed(const Matrix& x, const Matrix& w) {
    if (x.cols() != w.cols()) {
        throw error(errc::dimension_mismatch,
                    "linear: input " + x.shape_string() + " incompatible with weight " + w.shape_string());
    }
    Matrix out(x.rows(), w.rows());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto xr = x.row(t);
        for (std::size_t o = 0; o < w.rows(); ++o) {
            auto wr = w.row(o);
            double acc = 0.0;
            for (std::size_t j = 0; j < xr.size(); ++j) acc += xr[j] * wr[j];
            out(t, o) = acc;
        }
    }
    return out;
}

inline std::vector<double> column_l2_norms(const Matrix& x) {
    if (x.empty()) throw error(errc::invalid_argument, "column_l2_norms: empty matrix");
    std::vector<double> sq(x.cols(), 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto r = x.row(t);
        for (std::size_t j = 0; j < r.size(); ++j) sq[j] += r[j] * r[j];
    }
    for (auto& v : sq) v = std::sqrt(v);
    return sq;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw error(errc::dimension_mismatch, "max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
    }
    double m = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
    return m;
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

inline void require_square_symmetric(const Matrix& h, const char* who) {
    if (h.rows() != h.cols()) {
        throw error(errc::dimension_mismatch, std::string(who) + ": matrix is not square (" + h.shape_string() + ")");
    }
    const double tol = 1e-9 * std::max(1.0, max_abs(h));
    for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = i + 1; j < h.cols(); ++j)
            if (std::abs(h(i, j) - h(j, i)) > tol) {
                throw error(errc::invalid_argument, std::string(who) + ": matrix is not symmetric at (" +
                                                        std::to_string(i) + "," + std::to_string(j) + ")");
            }
}

// Lower-triangular L with h = L L^T. Only the lower triangle of h is read.
inline Matrix cholesky(const Matrix& h) {
    require_square_symmetric(h, "cholesky");
    const std::size_t n = h.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = h(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0) || !std::isfinite(d)) {
            throw error(errc::not_positive_definite,
                        "cholesky: matrix is not positive definite (pivot " + std::to_string(j) +
                            "); increase the damping fraction lambda");
        }
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = h(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

inline Matrix lower_triangular_inverse(const Matrix& l) {
    const std::size_t n = l.rows();
    Matrix inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        inv(j, j) = 1.0 / l(j, j);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = j; k < i; ++k) s -= l(i, k) * inv(k, j);
            inv(i, j) = s / l(i, i);
        }
    }
    return inv;
}

// Inverse of a symmetric positive-definite matrix via Cholesky: H^-1 = L^-T L^-1.
inline Matrix spd_inverse(const Matrix& h) {
    const Matrix linv = lower_triangular_inverse(cholesky(h));
    const std::size_t n = h.rows();
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t k = i; k < n; ++k) s += linv(k, i) * linv(k, j);
            out(i, j) = s;
            out(j, i) = s;
        }
    }
    return out;
}

// Upper-triangular U with h = U^T U.
inline Matrix cholesky_upper(const Matrix& h) { return cholesky(h).transposed(); }

}  // namespace prunebench
