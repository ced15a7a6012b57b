#pragma once

// Mask selection, channel permutation for N:M patterns, OBS compensation and
// whole-model pruning.
//
// Ranking is per output row unless RankGroup::per_layer is requested. Ties are
// always resolved in favour of the lower column index (it is kept).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "calibration.hpp"
#include "container.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "numfmt.hpp"
#include "parallel.hpp"

namespace prunebench {

struct Unstructured {
    double ratio = 0.0;
};

struct NofM {
    std::size_t n = 2;
    std::size_t m = 4;
};

using Pattern = std::variant<Unstructured, NofM>;

inline std::string pattern_string(const Pattern& p) {
    if (const auto* u = std::get_if<Unstructured>(&p)) return "unstructured:" + shortest(u->ratio);
    const auto& nm = std::get<NofM>(p);
    return std::to_string(nm.n) + ":" + std::to_string(nm.m);
}

inline NofM parse_nm(const std::string& s) {
    const auto colon = s.find(':');
    try {
        if (colon == std::string::npos) throw std::invalid_argument(s);
        std::size_t used = 0;
        NofM nm{std::stoul(s.substr(0, colon), &used), 0};
        if (used != colon) throw std::invalid_argument(s);
        nm.m = std::stoul(s.substr(colon + 1), &used);
        if (used != s.size() - colon - 1) throw std::invalid_argument(s);
        if (nm.m == 0 || nm.n > nm.m) throw std::invalid_argument(s);
        return nm;
    } catch (const std::exception&) {
        throw error(errc::invalid_argument, "invalid N:M pattern '" + s + "'");
    }
}

enum class RankGroup { per_row, per_layer };

struct PruneMask {
    std::string layer;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> keep;  // row-major, original column layout
    Pattern pattern;
    // permutation[p] is the original column placed at position p of the
    // permuted layout in which N:M groups are aligned.
    std::optional<std::vector<std::size_t>> permutation;

    bool kept(std::size_t r, std::size_t c) const { return keep[r * cols + c] != 0; }

    std::size_t pruned_count() const {
        return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{0}));
    }

    double sparsity() const {
        return keep.empty() ? 0.0 : static_cast<double>(pruned_count()) / static_cast<double>(keep.size());
    }

    std::size_t column_at(std::size_t position) const { return permutation ? (*permutation)[position] : position; }
};

// Number of weights kept in a row of `cols` entries at the given ratio.
inline std::size_t kept_per_row(double ratio, std::size_t cols) {
    return static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(cols)));
}

namespace detail {

inline void check_ratio(double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw error(errc::invalid_argument, "sparsity ratio must lie in [0, 1], got " + shortest(ratio));
    }
}

inline void check_nm(std::size_t cols, std::size_t n, std::size_t m) {
    if (m == 0 || n > m) {
        throw error(errc::invalid_argument, "invalid N:M pattern " + std::to_string(n) + ":" + std::to_string(m));
    }
    if (cols % m != 0) {
        throw error(errc::invalid_argument, "N:M pattern needs in_features (" + std::to_string(cols) +
                                                ") divisible by M (" + std::to_string(m) + ")");
    }
}

inline void check_permutation(const std::vector<std::size_t>& perm, std::size_t cols) {
    if (perm.size() != cols) throw error(errc::invariant, "column permutation has wrong length");
    std::vector<bool> seen(cols, false);
    for (std::size_t c : perm) {
        if (c >= cols || seen[c]) throw error(errc::invariant, "column permutation is not a bijection");
        seen[c] = true;
    }
}

// Sum of the n largest of `vals`.
inline double top_n_sum(std::vector<double>& vals, std::size_t n) {
    std::partial_sort(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(n), vals.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += vals[i];
    return s;
}

}  // namespace detail

inline PruneMask unstructured_mask(const Matrix& metric, double ratio, RankGroup group = RankGroup::per_row) {
    detail::check_ratio(ratio);
    PruneMask mask{.rows = metric.rows(), .cols = metric.cols(), .pattern = Unstructured{ratio}};
    mask.keep.assign(metric.size(), 0);
    auto by_value = [](std::span<const double> v) {
        return [v](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); };
    };
    if (group == RankGroup::per_row) {
        const std::size_t k = kept_per_row(ratio, metric.cols());
        std::vector<std::size_t> idx(metric.cols());
        for (std::size_t r = 0; r < metric.rows(); ++r) {
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::sort(idx.begin(), idx.end(), by_value(metric.row(r)));
            for (std::size_t t = 0; t < k; ++t) mask.keep[r * metric.cols() + idx[t]] = 1;
        }
    } else {
        const auto k = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(metric.size())));
        std::vector<std::size_t> idx(metric.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), by_value(metric.values()));
        for (std::size_t t = 0; t < k; ++t) mask.keep[idx[t]] = 1;
    }
    return mask;
}

// Keeps the n largest entries of every aligned group of m columns (in the
// permuted layout when a permutation is given).
inline PruneMask n_of_m_mask(const Matrix& metric, std::size_t n, std::size_t m,
                             std::optional<std::vector<std::size_t>> permutation = std::nullopt) {
    detail::check_nm(metric.cols(), n, m);
    if (permutation) detail::check_permutation(*permutation, metric.cols());
    PruneMask mask{.rows = metric.rows(), .cols = metric.cols(), .pattern = NofM{n, m},
                   .permutation = std::move(permutation)};
    mask.keep.assign(metric.size(), 0);
    std::vector<std::size_t> pos(m);
    for (std::size_t r = 0; r < metric.rows(); ++r) {
        for (std::size_t g = 0; g < metric.cols(); g += m) {
            std::iota(pos.begin(), pos.end(), g);
            std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
                return metric(r, mask.column_at(a)) > metric(r, mask.column_at(b));
            });
            for (std::size_t t = 0; t < n; ++t) mask.keep[r * metric.cols() + mask.column_at(pos[t])] = 1;
        }
    }
    return mask;
}

inline double retained_importance(const Matrix& metric, const PruneMask& mask) {
    if (metric.rows() != mask.rows || metric.cols() != mask.cols) {
        throw error(errc::dimension_mismatch, "retained_importance: metric/mask shape mismatch");
    }
    double s = 0.0;
    auto v = metric.values();
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask.keep[i]) s += v[i];
    return s;
}

// Structural check of every mask invariant; throws errc::invariant.
inline void validate_mask(const PruneMask& mask) {
    if (mask.keep.size() != mask.rows * mask.cols) throw error(errc::invariant, mask.layer + ": mask size mismatch");
    if (mask.permutation) detail::check_permutation(*mask.permutation, mask.cols);
    if (const auto* u = std::get_if<Unstructured>(&mask.pattern)) {
        detail::check_ratio(u->ratio);
        return;
    }
    const auto nm = std::get<NofM>(mask.pattern);
    detail::check_nm(mask.cols, nm.n, nm.m);
    for (std::size_t r = 0; r < mask.rows; ++r)
        for (std::size_t g = 0; g < mask.cols; g += nm.m) {
            std::size_t kept = 0;
            for (std::size_t p = g; p < g + nm.m; ++p) kept += mask.kept(r, mask.column_at(p));
            if (kept > nm.n) {
                throw error(errc::invariant, mask.layer + ": row " + std::to_string(r) + " group at " +
                                                 std::to_string(g) + " keeps " + std::to_string(kept) + " > " +
                                                 std::to_string(nm.n));
            }
        }
}

struct ChannelPermutation {
    std::vector<std::size_t> permutation;
    PruneMask mask;
    double retained = 0.0;
    double identity_retained = 0.0;
};

namespace detail {

class GroupAssignment {
public:
    GroupAssignment(const Matrix& metric, std::size_t n, std::vector<std::vector<std::size_t>> groups)
        : metric_(metric), n_(n), groups_(std::move(groups)), contrib_(groups_.size()) {
        for (std::size_t g = 0; g < groups_.size(); ++g) contrib_[g] = group_contrib(groups_[g]);
    }

    double total() const {
        double s = 0.0;
        for (const auto& c : contrib_)
            for (double v : c) s += v;
        return s;
    }

    // First-improvement pairwise swaps across groups until a full pass finds
    // nothing or max_swaps swaps have been accepted.
    void hill_climb(std::size_t max_swaps) {
        std::size_t swaps = 0;
        bool improved = true;
        const double tol = 1e-12 * std::max(1.0, total());
        while (improved && swaps < max_swaps) {
            improved = false;
            for (std::size_t g1 = 0; g1 < groups_.size() && swaps < max_swaps; ++g1)
                for (std::size_t g2 = g1 + 1; g2 < groups_.size() && swaps < max_swaps; ++g2)
                    for (std::size_t a = 0; a < groups_[g1].size() && swaps < max_swaps; ++a)
                        for (std::size_t b = 0; b < groups_[g2].size() && swaps < max_swaps; ++b) {
                            std::swap(groups_[g1][a], groups_[g2][b]);
                            auto c1 = group_contrib(groups_[g1]);
                            auto c2 = group_contrib(groups_[g2]);
                            double delta = 0.0;
                            for (std::size_t r = 0; r < c1.size(); ++r)
                                delta += (c1[r] - contrib_[g1][r]) + (c2[r] - contrib_[g2][r]);
                            if (delta > tol) {
                                contrib_[g1] = std::move(c1);
                                contrib_[g2] = std::move(c2);
                                ++swaps;
                                improved = true;
                            } else {
                                std::swap(groups_[g1][a], groups_[g2][b]);
                            }
                        }
        }
    }

    std::vector<std::size_t> permutation() const {
        std::vector<std::size_t> perm;
        for (auto g : groups_) {
            std::sort(g.begin(), g.end());
            perm.insert(perm.end(), g.begin(), g.end());
        }
        return perm;
    }

private:
    std::vector<double> group_contrib(const std::vector<std::size_t>& cols) const {
        std::vector<double> out(metric_.rows());
        std::vector<double> vals(cols.size());
        for (std::size_t r = 0; r < metric_.rows(); ++r) {
            for (std::size_t k = 0; k < cols.size(); ++k) vals[k] = metric_(r, cols[k]);
            out[r] = top_n_sum(vals, n_);
        }
        return out;
    }

    const Matrix& metric_;
    std::size_t n_;
    std::vector<std::vector<std::size_t>> groups_;
    std::vector<std::vector<double>> contrib_;
};

}  // namespace detail

inline constexpr std::size_t max_permutation_swaps = 1000;

// Column permutation raising the importance an N:M mask retains. Columns are
// sorted by total importance and dealt round-robin into groups, then refined
// by pairwise swaps; the identity layout is refined the same way and the
// better of the two wins. The result never retains less than identity.
inline ChannelPermutation channel_permutation(const Matrix& metric, std::size_t n, std::size_t m) {
    detail::check_nm(metric.cols(), n, m);
    const std::size_t cols = metric.cols();
    const std::size_t n_groups = cols / m;

    ChannelPermutation out;
    PruneMask identity = n_of_m_mask(metric, n, m);
    out.identity_retained = retained_importance(metric, identity);

    std::vector<double> totals(cols, 0.0);
    for (std::size_t r = 0; r < metric.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) totals[c] += metric(r, c);
    std::vector<std::size_t> order(cols);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return totals[a] > totals[b]; });

    std::vector<std::vector<std::size_t>> dealt(n_groups), aligned(n_groups);
    for (std::size_t k = 0; k < cols; ++k) {
        dealt[k % n_groups].push_back(order[k]);
        aligned[k / m].push_back(k);
    }

    std::optional<std::vector<std::size_t>> best_perm;
    double best = out.identity_retained;
    for (auto* start : {&aligned, &dealt}) {
        detail::GroupAssignment ga(metric, n, *start);
        ga.hill_climb(max_permutation_swaps);
        auto perm = ga.permutation();
        const double r = retained_importance(metric, n_of_m_mask(metric, n, m, perm));
        if (r > best) {
            best = r;
            best_perm = std::move(perm);
        }
    }
    if (!best_perm) {
        best_perm.emplace(cols);
        std::iota(best_perm->begin(), best_perm->end(), std::size_t{0});
    }
    out.permutation = *best_perm;
    out.mask = n_of_m_mask(metric, n, m, out.permutation);
    out.retained = best;
    return out;
}

inline Matrix apply_mask(const Matrix& w, const PruneMask& mask) {
    if (w.rows() != mask.rows || w.cols() != mask.cols) {
        throw error(errc::dimension_mismatch, "apply_mask: weight " + w.shape_string() + " vs mask " +
                                                  std::to_string(mask.rows) + "x" + std::to_string(mask.cols));
    }
    Matrix out = w;
    auto v = out.values();
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!mask.keep[i]) v[i] = 0.0;
    return out;
}

// W[:, perm]: the layout in which a permuted N:M mask is group-aligned.
inline Matrix permute_columns(const Matrix& w, const std::vector<std::size_t>& perm) {
    detail::check_permutation(perm, w.cols());
    Matrix out(w.rows(), w.cols());
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t p = 0; p < perm.size(); ++p) out(r, p) = w(r, perm[p]);
    return out;
}

inline Matrix permute_symmetric(const Matrix& h, const std::vector<std::size_t>& perm) {
    Matrix out(h.rows(), h.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < perm.size(); ++j) out(i, j) = h(perm[i], perm[j]);
    return out;
}

struct ObsOptions {
    std::size_t block_size = 128;
    bool squared_denominator = true;
    std::optional<std::vector<std::size_t>> permutation;  // N:M only
};

struct ObsResult {
    Matrix weights;
    PruneMask mask;
};

// Column-sequential OBS pruning driven by the upper Cholesky factor U of H^-1
// (H^-1 = U^T U). Walking columns left to right, U(i,i)^2 is the inverse
// Hessian diagonal of column i conditioned on the columns already frozen, and
// pruning w = W(r,i) applies W(r,j) -= (w / U(i,i)) * U(i,j) for j > i.
//
// Prune candidates are chosen per row by the current saliency
// w^2 / U(i,i)^(2p) (p = 2 squared, 1 classic): at the start of each block for
// unstructured patterns (the row's remaining budget over all unfrozen
// columns, of which those inside the block are pruned), and at the start of
// each aligned group for N:M.
inline ObsResult obs_prune(const Matrix& w, const Matrix& h_inv, const Pattern& pattern, const ObsOptions& opt = {}) {
    if (h_inv.rows() != w.cols() || h_inv.cols() != w.cols()) {
        throw error(errc::dimension_mismatch,
                    "obs_prune: H^-1 " + h_inv.shape_string() + " does not match weight " + w.shape_string());
    }
    if (opt.block_size == 0) throw error(errc::invalid_argument, "obs_prune: block size must be positive");
    const std::size_t rows = w.rows();
    const std::size_t cols = w.cols();
    const auto* nm = std::get_if<NofM>(&pattern);
    if (const auto* u = std::get_if<Unstructured>(&pattern)) detail::check_ratio(u->ratio);
    if (nm) detail::check_nm(cols, nm->n, nm->m);
    const bool permuted = nm && opt.permutation.has_value();
    if (permuted) detail::check_permutation(*opt.permutation, cols);

    Matrix W = permuted ? permute_columns(w, *opt.permutation) : w;
    Matrix U;
    try {
        U = cholesky_upper(permuted ? permute_symmetric(h_inv, *opt.permutation) : h_inv);
    } catch (const error& e) {
        throw error(errc::insufficient_damping, std::string("obs_prune: H^-1 factorization failed (") + e.what() +
                                                    "); increase the damping fraction");
    }
    std::vector<double> var(cols);  // conditional [H^-1]_ii
    for (std::size_t i = 0; i < cols; ++i) {
        var[i] = U(i, i) * U(i, i);
        if (!(var[i] > 1e-12)) {
            throw error(errc::insufficient_damping,
                        "obs_prune: [H^-1]_qq <= 1e-12 at column " + std::to_string(i) + "; increase the damping fraction");
        }
    }
    auto saliency = [&](std::size_t r, std::size_t i) {
        const double d = opt.squared_denominator ? var[i] * var[i] : var[i];
        return W(r, i) * W(r, i) / d;
    };

    std::vector<std::uint8_t> keep(rows * cols, 1);
    std::vector<std::size_t> budget(rows, 0);
    if (!nm) budget.assign(rows, cols - kept_per_row(std::get<Unstructured>(pattern).ratio, cols));

    std::vector<std::size_t> idx;
    for (std::size_t b0 = 0; b0 < cols; b0 += opt.block_size) {
        const std::size_t b1 = std::min(cols, b0 + opt.block_size);
        if (!nm) {
            for (std::size_t r = 0; r < rows; ++r) {
                if (budget[r] == 0) continue;
                idx.resize(cols - b0);
                std::iota(idx.begin(), idx.end(), b0);
                // Lowest saliency first; among equals the higher column goes first.
                std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                    const double sa = saliency(r, a), sb = saliency(r, b);
                    return sa < sb || (sa == sb && a > b);
                });
                for (std::size_t t = 0; t < budget[r]; ++t)
                    if (idx[t] < b1) keep[r * cols + idx[t]] = 0;
            }
        }
        for (std::size_t i = b0; i < b1; ++i) {
            if (nm && i % nm->m == 0) {
                std::vector<std::size_t> pos(nm->m);
                for (std::size_t r = 0; r < rows; ++r) {
                    std::iota(pos.begin(), pos.end(), i);
                    std::stable_sort(pos.begin(), pos.end(),
                                     [&](std::size_t a, std::size_t b) { return saliency(r, a) > saliency(r, b); });
                    for (std::size_t t = nm->n; t < nm->m; ++t) keep[r * cols + pos[t]] = 0;
                }
            }
            const double d = U(i, i);
            for (std::size_t r = 0; r < rows; ++r) {
                if (keep[r * cols + i]) continue;
                const double err = W(r, i) / d;
                W(r, i) = 0.0;
                if (!nm) --budget[r];
                if (err == 0.0) continue;
                auto wr = W.row(r);
                auto ur = U.row(i);
                for (std::size_t j = i + 1; j < cols; ++j) wr[j] -= err * ur[j];
            }
        }
    }

    ObsResult out;
    out.mask.rows = rows;
    out.mask.cols = cols;
    out.mask.pattern = pattern;
    out.mask.keep.assign(rows * cols, 0);
    if (permuted) {
        const auto& perm = *opt.permutation;
        out.weights = Matrix(rows, cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t p = 0; p < cols; ++p) {
                out.weights(r, perm[p]) = W(r, p);
                out.mask.keep[r * cols + perm[p]] = keep[r * cols + p];
            }
        out.mask.permutation = perm;
    } else {
        out.weights = std::move(W);
        out.mask.keep = std::move(keep);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Whole-model pruning

struct PruneOptions {
    Pattern pattern = Unstructured{0.5};
    bool permute = false;  // channel permutation, N:M patterns only
    std::size_t block_size = 128;
    RankGroup group = RankGroup::per_row;
    std::size_t workers = 0;
};

struct LayerSummary {
    std::string layer;
    std::size_t numel = 0;
    std::size_t pruned = 0;
    double achieved_sparsity = 0.0;
    double retained_importance = 0.0;
    double total_importance = 0.0;
    std::optional<double> identity_retained_importance;  // set when a permutation was searched
    std::optional<std::vector<std::size_t>> permutation;
    double wall_ms = 0.0;
};

struct PruneResult {
    ModelBundle bundle;
    std::map<std::string, PruneMask> masks;
    std::vector<LayerSummary> summary;  // canonical layer order
};

struct LayerPruneOutput {
    Matrix weights;
    PruneMask mask;
    LayerSummary summary;
};

inline LayerPruneOutput prune_layer(const Matrix& w, const CalibStats& stats, const std::string& layer,
                                    const MetricConfig& cfg, const PruneOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    const auto* nm = std::get_if<NofM>(&opt.pattern);
    LayerPruneOutput out;
    out.summary.layer = layer;
    out.summary.numel = w.size();
    Matrix metric;
    if (cfg.method == Method::sparsegpt) {
        if (opt.group != RankGroup::per_row) {
            throw error(errc::invalid_argument, "sparsegpt selects prune candidates per row only");
        }
        auto sg = sparsegpt_metric(w, stats, layer, cfg.sparsegpt_squared_denominator);
        metric = std::move(sg.metric);
        ObsOptions obs{.block_size = opt.block_size, .squared_denominator = cfg.sparsegpt_squared_denominator};
        if (nm && opt.permute) {
            auto cp = channel_permutation(metric, nm->n, nm->m);
            out.summary.identity_retained_importance = cp.identity_retained;
            obs.permutation = cp.permutation;
        }
        auto res = obs_prune(w, sg.h_inv, opt.pattern, obs);
        out.weights = std::move(res.weights);
        out.mask = std::move(res.mask);
    } else {
        metric = compute_metric(w, stats, layer, cfg);
        if (nm) {
            if (opt.permute) {
                auto cp = channel_permutation(metric, nm->n, nm->m);
                out.summary.identity_retained_importance = cp.identity_retained;
                out.mask = std::move(cp.mask);
            } else {
                out.mask = n_of_m_mask(metric, nm->n, nm->m);
            }
        } else {
            out.mask = unstructured_mask(metric, std::get<Unstructured>(opt.pattern).ratio, opt.group);
        }
        out.weights = apply_mask(w, out.mask);
    }
    out.mask.layer = layer;
    validate_mask(out.mask);
    out.summary.pruned = out.mask.pruned_count();
    out.summary.achieved_sparsity = out.mask.sparsity();
    out.summary.retained_importance = retained_importance(metric, out.mask);
    for (double v : metric.values()) out.summary.total_importance += v;
    out.summary.permutation = out.mask.permutation;
    out.summary.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
}

inline PruneResult prune_model(const ModelBundle& bundle, const CalibStats& stats, const MetricConfig& cfg,
                               const PruneOptions& opt) {
    const auto layers = prunable_layers(bundle.spec);
    for (const auto& l : layers) stats.layer(l);
    stats.require_tokens();
    std::vector<LayerPruneOutput> outputs(layers.size());
    parallel_for(
        layers.size(),
        [&](std::size_t i) { outputs[i] = prune_layer(bundle.tensor(weight_name(layers[i])), stats, layers[i], cfg, opt); },
        opt.workers);
    PruneResult res;
    std::map<std::string, Matrix> replacements;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        replacements.emplace(weight_name(layers[i]), std::move(outputs[i].weights));
        res.masks.emplace(layers[i], std::move(outputs[i].mask));
        res.summary.push_back(std::move(outputs[i].summary));
    }
    res.bundle = apply_weights(bundle, replacements);
    return res;
}

inline nlohmann::json summary_to_json(const std::vector<LayerSummary>& summary, bool with_timings) {
    auto arr = nlohmann::json::array();
    for (const auto& s : summary) {
        nlohmann::json j = {{"layer", s.layer},
                            {"numel", s.numel},
                            {"pruned", s.pruned},
                            {"achieved_sparsity", s.achieved_sparsity},
                            {"retained_importance", s.retained_importance},
                            {"total_importance", s.total_importance}};
        if (s.identity_retained_importance) j["identity_retained_importance"] = *s.identity_retained_importance;
        j["permutation"] = s.permutation ? nlohmann::json(*s.permutation) : nlohmann::json(nullptr);
        if (with_timings) j["wall_ms"] = s.wall_ms;
        arr.push_back(std::move(j));
    }
    return arr;
}

// ---------------------------------------------------------------------------
// Mask file: framed container, payload = keep bits packed LSB-first, row-major.

inline constexpr std::string_view mask_magic = "PBMASK01";

inline nlohmann::json pattern_to_json(const Pattern& p) {
    if (const auto* u = std::get_if<Unstructured>(&p)) return {{"type", "unstructured"}, {"ratio", u->ratio}};
    const auto& nm = std::get<NofM>(p);
    return {{"type", "n_of_m"}, {"n", nm.n}, {"m", nm.m}};
}

inline Pattern pattern_from_json(const nlohmann::json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "unstructured") return Unstructured{j.at("ratio").get<double>()};
    if (type == "n_of_m") return NofM{j.at("n").get<std::size_t>(), j.at("m").get<std::size_t>()};
    throw error(errc::bad_header, "unknown mask pattern type '" + type + "'");
}

inline std::vector<std::uint8_t> serialize_mask(const PruneMask& mask) {
    validate_mask(mask);
    nlohmann::json header = {{"format", "pbmask"},
                             {"version", 1},
                             {"layer", mask.layer},
                             {"rows", mask.rows},
                             {"cols", mask.cols},
                             {"pattern", pattern_to_json(mask.pattern)},
                             {"permutation", mask.permutation ? nlohmann::json(*mask.permutation) : nlohmann::json(nullptr)}};
    std::vector<std::uint8_t> bits((mask.keep.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < mask.keep.size(); ++i)
        if (mask.keep[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    return encode_framed(mask_magic, header, bits);
}

inline void save_mask(const PruneMask& mask, const std::string& path) { write_file_bytes(path, serialize_mask(mask)); }

inline PruneMask load_mask(const std::string& path) {
    auto framed = decode_framed(
        read_file_bytes(path), mask_magic,
        [](const nlohmann::json& h) {
            return (h.at("rows").get<std::size_t>() * h.at("cols").get<std::size_t>() + 7) / 8;
        },
        path);
    PruneMask mask;
    try {
        mask.layer = framed.header.at("layer").get<std::string>();
        mask.rows = framed.header.at("rows").get<std::size_t>();
        mask.cols = framed.header.at("cols").get<std::size_t>();
        mask.pattern = pattern_from_json(framed.header.at("pattern"));
        if (!framed.header.at("permutation").is_null()) {
            mask.permutation = framed.header.at("permutation").get<std::vector<std::size_t>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::bad_header, path + ": malformed mask header: " + e.what());
    }
    mask.keep.resize(mask.rows * mask.cols);
    for (std::size_t i = 0; i < mask.keep.size(); ++i) mask.keep[i] = (framed.payload[i / 8] >> (i % 8)) & 1u;
    validate_mask(mask);
    return mask;
}

}  // namespace prunebench
