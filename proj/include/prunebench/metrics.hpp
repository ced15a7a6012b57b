#pragma once

// Per-weight saliency M for a linear layer W (out_features x in_features).
// Input-feature statistics live on W's columns.
//
//   wanda:     M = |W_ij| * ||X_j||_2
//   ria:       M = (|W_ij| / sum_k |W_kj| + |W_ij| / sum_k |W_ik|) * ||X_j||_2^a
//   sparsegpt: M = W_ij^2 / ([H^-1]_jj)^2,   H = X^T X + lambda I
//
// The sparsegpt denominator is squared by default; `squared_denominator =
// false` selects the classic OBS saliency W^2 / [H^-1]_jj.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "calibration.hpp"
#include "error.hpp"
#include "log.hpp"
#include "matrix.hpp"

namespace prunebench {

enum class Method { wanda, sparsegpt, ria };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::wanda: return "wanda";
        case Method::sparsegpt: return "sparsegpt";
        case Method::ria: return "ria";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "wanda") return Method::wanda;
    if (s == "sparsegpt") return Method::sparsegpt;
    if (s == "ria") return Method::ria;
    throw error(errc::invalid_argument, "unknown pruning method '" + s + "' (expected wanda|sparsegpt|ria)");
}

struct MetricConfig {
    Method method = Method::wanda;
    double ria_exponent = 0.5;  // only read when method == ria
    bool sparsegpt_squared_denominator = true;
};

namespace detail {

inline void require_features(const Matrix& w, std::size_t n, const char* who) {
    if (w.cols() != n) {
        throw error(errc::dimension_mismatch, std::string(who) + ": weight has " + std::to_string(w.cols()) +
                                                  " input features, statistics have " + std::to_string(n));
    }
}

}  // namespace detail

inline Matrix wanda_metric(const Matrix& w, std::span<const double> col_norms) {
    detail::require_features(w, col_norms.size(), "wanda_metric");
    Matrix m(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) m(i, j) = std::abs(w(i, j)) * col_norms[j];
    return m;
}

inline Matrix wanda_metric(const Matrix& w, const CalibStats& stats, const std::string& layer) {
    return wanda_metric(w, stats.column_norms(layer));
}

// All-zero rows or columns make their relative-importance term 0/0, taken as 0.
inline Matrix ria_metric(const Matrix& w, std::span<const double> col_norms, double a) {
    detail::require_features(w, col_norms.size(), "ria_metric");
    if (!(a >= 0.0 && a <= 1.0)) throw error(errc::invalid_argument, "ria_metric: exponent must lie in [0, 1]");
    std::vector<double> row_sum(w.rows(), 0.0);
    std::vector<double> col_sum(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const double v = std::abs(w(i, j));
            row_sum[i] += v;
            col_sum[j] += v;
        }
    std::size_t degenerate = 0;
    for (double s : row_sum) degenerate += s == 0.0;
    for (double s : col_sum) degenerate += s == 0.0;
    if (degenerate > 0) log::warn("ria_metric: " + std::to_string(degenerate) + " all-zero rows/columns (0/0 -> 0)");

    std::vector<double> scale(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) scale[j] = a == 0.0 ? 1.0 : std::pow(col_norms[j], a);
    Matrix m(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const double v = std::abs(w(i, j));
            const double by_col = col_sum[j] > 0.0 ? v / col_sum[j] : 0.0;
            const double by_row = row_sum[i] > 0.0 ? v / row_sum[i] : 0.0;
            m(i, j) = (by_col + by_row) * scale[j];
        }
    }
    return m;
}

inline Matrix ria_metric(const Matrix& w, const CalibStats& stats, const std::string& layer, double a) {
    return ria_metric(w, stats.column_norms(layer), a);
}

struct SparseGptMetric {
    Matrix metric;
    Matrix h_inv;
};

inline Matrix sparsegpt_metric_from_inverse(const Matrix& w, const Matrix& h_inv, bool squared_denominator = true) {
    detail::require_features(w, h_inv.rows(), "sparsegpt_metric");
    Matrix m(w.rows(), w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
        const double d = h_inv(j, j);
        if (!(d > 1e-12)) {
            throw error(errc::insufficient_damping, "sparsegpt_metric: [H^-1]_jj <= 1e-12 at column " +
                                                        std::to_string(j) + "; increase the damping fraction");
        }
        const double denom = squared_denominator ? d * d : d;
        for (std::size_t i = 0; i < w.rows(); ++i) m(i, j) = w(i, j) * w(i, j) / denom;
    }
    return m;
}

inline SparseGptMetric sparsegpt_metric(const Matrix& w, const Matrix& damped_gram, bool squared_denominator = true) {
    detail::require_features(w, damped_gram.rows(), "sparsegpt_metric");
    Matrix h_inv = spd_inverse(damped_gram);
    Matrix m = sparsegpt_metric_from_inverse(w, h_inv, squared_denominator);
    return {std::move(m), std::move(h_inv)};
}

inline SparseGptMetric sparsegpt_metric(const Matrix& w, const CalibStats& stats, const std::string& layer,
                                        bool squared_denominator = true) {
    return sparsegpt_metric(w, stats.damped_gram(layer), squared_denominator);
}

inline Matrix compute_metric(const Matrix& w, const CalibStats& stats, const std::string& layer,
                             const MetricConfig& cfg) {
    switch (cfg.method) {
        case Method::wanda: return wanda_metric(w, stats, layer);
        case Method::ria: return ria_metric(w, stats, layer, cfg.ria_exponent);
        case Method::sparsegpt: return sparsegpt_metric(w, stats, layer, cfg.sparsegpt_squared_denominator).metric;
    }
    throw error(errc::invariant, "compute_metric: unhandled method");
}

}  // namespace prunebench
