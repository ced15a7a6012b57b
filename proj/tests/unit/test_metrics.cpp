#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "prunebench/metrics.hpp"
#include "support.hpp"

namespace pb = prunebench;
using namespace testing_support;

namespace {

std::vector<double> random_norms(std::size_t n, pb::Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(0.1, 3.0);
    return v;
}

std::vector<std::size_t> row_argsort(const pb::Matrix& m, std::size_t r) {
    std::vector<std::size_t> idx(m.cols());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m(r, a) < m(r, b); });
    return idx;
}

pb::CalibStats stats_with_gram(const pb::Matrix& gram, double damping) {
    pb::CalibStats s;
    s.token_count = 1;
    s.damping_fraction = damping;
    pb::LayerStats l;
    l.gram = gram;
    for (std::size_t j = 0; j < gram.rows(); ++j) l.col_norm_sq.push_back(gram(j, j));
    s.layers.emplace("layer", l);
    return s;
}

}  // namespace

TEST(Wanda, HandExpansion) {
    const pb::Matrix w{{1, -2}, {3, 4}};
    const std::vector<double> norms = {2, 1};
    EXPECT_EQ(pb::wanda_metric(w, norms), (pb::Matrix{{2, 2}, {6, 4}}));
}

TEST(Wanda, ZeroWeightsGiveZeroMetric) {
    const std::vector<double> norms = {1, 2, 3};
    EXPECT_EQ(pb::wanda_metric(pb::Matrix(2, 3), norms), pb::Matrix(2, 3));
}

TEST(Wanda, MatchesElementwiseOracle) {
    pb::Rng rng(41);
    const auto w = random_matrix(8, 8, rng);
    const auto n = random_norms(8, rng);
    const auto m = pb::wanda_metric(w, n);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) EXPECT_LE(rel_diff(m(i, j), std::fabs(w(i, j)) * n[j]), 1e-12);
}

TEST(Wanda, FromStatsUsesColumnNorms) {
    const pb::Matrix gram{{4, 0}, {0, 9}};
    const auto s = stats_with_gram(gram, 0.01);
    EXPECT_EQ(pb::wanda_metric(pb::Matrix{{1, 1}}, s, "layer"), (pb::Matrix{{2, 3}}));
}

TEST(Wanda, ScalingPreservesRowRanking) {
    pb::Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const auto w = random_matrix(4, 10, rng);
        auto n = random_norms(10, rng);
        const auto base = pb::wanda_metric(w, n);
        const double c = rng.uniform(0.1, 10.0);
        pb::Matrix cw = w;
        for (auto& v : cw.values()) v *= c;
        auto cn = n;
        for (auto& v : cn) v *= c;
        const auto mw = pb::wanda_metric(cw, n);
        const auto mn = pb::wanda_metric(w, cn);
        for (std::size_t i = 0; i < base.size(); ++i) {
            EXPECT_LE(rel_diff(mw.values()[i], c * base.values()[i]), 1e-12);
            EXPECT_LE(rel_diff(mn.values()[i], c * base.values()[i]), 1e-12);
        }
        for (std::size_t r = 0; r < 4; ++r) {
            EXPECT_EQ(row_argsort(mw, r), row_argsort(base, r));
            EXPECT_EQ(row_argsort(mn, r), row_argsort(base, r));
        }
    }
}

TEST(Wanda, FeatureCountMismatch) {
    const std::vector<double> norms = {1, 2};
    try {
        pb::wanda_metric(pb::Matrix(2, 3), norms);
        FAIL();
    } catch (const pb::error& e) {
        EXPECT_EQ(e.code(), pb::errc::dimension_mismatch);
    }
}

TEST(Ria, HandExpansionWithZeroExponent) {
    const pb::Matrix w{{1, 2}, {3, 4}};
    const std::vector<double> norms = {5, 7};
    const auto m = pb::ria_metric(w, norms, 0.0);
    EXPECT_DOUBLE_EQ(m(0, 0), 7.0 / 12.0);
    EXPECT_DOUBLE_EQ(m(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(m(1, 0), 33.0 / 28.0);
    EXPECT_DOUBLE_EQ(m(1, 1), 26.0 / 21.0);
}

TEST(Ria, ZeroExponentIgnoresStats) {
    pb::Rng rng(43);
    const auto w = random_matrix(5, 6, rng);
    EXPECT_EQ(pb::ria_metric(w, random_norms(6, rng), 0.0), pb::ria_metric(w, random_norms(6, rng), 0.0));
}

TEST(Ria, MatchesDirectFormulaOracle) {
    pb::Rng rng(44);
    const auto w = random_matrix(8, 8, rng);
    const auto n = random_norms(8, rng);
    const auto m = pb::ria_metric(w, n, 0.5);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            double row = 0.0, col = 0.0;
            for (std::size_t k = 0; k < 8; ++k) {
                row += std::fabs(w(i, k));
                col += std::fabs(w(k, j));
            }
            const double expect = (std::fabs(w(i, j)) / col + std::fabs(w(i, j)) / row) * std::sqrt(n[j]);
            EXPECT_LE(rel_diff(m(i, j), expect), 1e-10);
        }
}

TEST(Ria, ZeroExponentScaleFreeExactly) {
    pb::Rng rng(45);
    for (int trial = 0; trial < 20; ++trial) {
        const auto w = random_matrix(4, 4, rng);
        const auto n = random_norms(4, rng);
        pb::Matrix cw = w;
        for (auto& v : cw.values()) v *= 2.0;  // power of two keeps the arithmetic exact
        EXPECT_EQ(pb::ria_metric(cw, n, 0.0), pb::ria_metric(w, n, 0.0));
    }
}

TEST(Ria, ZeroRowAndColumnAreZeroNotNan) {
    const pb::Matrix w{{0, 0, 0}, {1, 0, 2}};
    const std::vector<double> norms = {1, 1, 1};
    const auto m = pb::ria_metric(w, norms, 0.5);
    EXPECT_TRUE(m.all_finite());
    EXPECT_EQ(m(0, 0), 0.0);
    EXPECT_EQ(m(1, 1), 0.0);
}

TEST(Ria, ExponentOutsideUnitIntervalRejected) {
    const std::vector<double> norms = {1};
    EXPECT_THROW(pb::ria_metric(pb::Matrix{{1}}, norms, 1.5), pb::error);
    EXPECT_THROW(pb::ria_metric(pb::Matrix{{1}}, norms, -0.1), pb::error);
}

TEST(SparseGpt, IdentityHessianIsSquaredMagnitude) {
    pb::Rng rng(46);
    const auto w = random_matrix(3, 4, rng);
    const auto r = pb::sparsegpt_metric(w, pb::Matrix::identity(4));
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(r.metric.values()[i], w.values()[i] * w.values()[i]);
    for (std::size_t row = 0; row < 3; ++row) {
        pb::Matrix sq = w;
        for (auto& v : sq.values()) v = v * v;
        EXPECT_EQ(row_argsort(r.metric, row), row_argsort(sq, row));
    }
}

TEST(SparseGpt, DiagonalHessianHandExpansion) {
    const pb::Matrix w{{1, 2}, {3, 4}};
    const auto sq = pb::sparsegpt_metric(w, pb::Matrix{{2, 0}, {0, 4}}, true);
    EXPECT_DOUBLE_EQ(sq.h_inv(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(sq.h_inv(1, 1), 0.25);
    EXPECT_DOUBLE_EQ(sq.metric(0, 0), 1.0 / 0.25);
    EXPECT_DOUBLE_EQ(sq.metric(0, 1), 4.0 / 0.0625);
    EXPECT_DOUBLE_EQ(sq.metric(1, 1), 16.0 / 0.0625);
    const auto classic = pb::sparsegpt_metric(w, pb::Matrix{{2, 0}, {0, 4}}, false);
    EXPECT_DOUBLE_EQ(classic.metric(0, 0), 1.0 / 0.5);
    EXPECT_DOUBLE_EQ(classic.metric(1, 1), 16.0 / 0.25);
}

TEST(SparseGpt, MatchesExplicitInverseOracle) {
    pb::Rng rng(47);
    const auto w = random_matrix(8, 8, rng);
    const auto h = random_spd(8, rng);
    // Oracle inverse by Gauss-Jordan elimination.
    pb::Matrix a = h, inv = pb::Matrix::identity(8);
    for (std::size_t c = 0; c < 8; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < 8; ++r)
            if (std::fabs(a(r, c)) > std::fabs(a(p, c))) p = r;
        for (std::size_t k = 0; k < 8; ++k) {
            std::swap(a(c, k), a(p, k));
            std::swap(inv(c, k), inv(p, k));
        }
        const double d = a(c, c);
        for (std::size_t k = 0; k < 8; ++k) {
            a(c, k) /= d;
            inv(c, k) /= d;
        }
        for (std::size_t r = 0; r < 8; ++r) {
            if (r == c) continue;
            const double f = a(r, c);
            for (std::size_t k = 0; k < 8; ++k) {
                a(r, k) -= f * a(c, k);
                inv(r, k) -= f * inv(c, k);
            }
        }
    }
    const auto m = pb::sparsegpt_metric(w, h).metric;
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            EXPECT_LE(rel_diff(m(i, j), w(i, j) * w(i, j) / (inv(j, j) * inv(j, j))), 1e-8);
}

TEST(SparseGpt, DampingAppliedFromStats) {
    // Raw gram diag(2, 6), fraction 0.5: lambda = 0.5 * 4 = 2, H = diag(4, 8).
    const auto s = stats_with_gram(pb::Matrix{{2, 0}, {0, 6}}, 0.5);
    const auto r = pb::sparsegpt_metric(pb::Matrix{{1, 1}}, s, "layer", false);
    EXPECT_DOUBLE_EQ(r.h_inv(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(r.h_inv(1, 1), 0.125);
}

TEST(SparseGpt, SingularGramWithoutDampingIsNumericalError) {
    const auto s = stats_with_gram(pb::Matrix{{1, 1}, {1, 1}}, 0.0);
    try {
        pb::sparsegpt_metric(pb::Matrix{{1, 1}}, s, "layer");
        FAIL();
    } catch (const pb::error& e) {
        EXPECT_EQ(pb::exit_code(e.code()), 3);
    }
}

TEST(Metrics, AllNonNegative) {
    pb::Rng rng(48);
    for (int trial = 0; trial < 30; ++trial) {
        const auto w = random_matrix(6, 8, rng);
        const auto s = stats_with_gram(random_spd(8, rng), 0.01);
        for (auto method : {pb::Method::wanda, pb::Method::ria, pb::Method::sparsegpt}) {
            const auto m = pb::compute_metric(w, s, "layer", {method, 0.5, true});
            for (double v : m.values()) EXPECT_GE(v, 0.0);
        }
    }
}

TEST(Metrics, ParseMethod) {
    EXPECT_EQ(pb::parse_method("wanda"), pb::Method::wanda);
    EXPECT_EQ(pb::parse_method("sparsegpt"), pb::Method::sparsegpt);
    EXPECT_EQ(pb::parse_method("ria"), pb::Method::ria);
    EXPECT_THROW(pb::parse_method("magnitude"), pb::error);
}

TEST(Metrics, RiaExponentIgnoredForOtherMethods) {
    pb::Rng rng(49);
    const auto w = random_matrix(3, 4, rng);
    const auto s = stats_with_gram(random_spd(4, rng), 0.01);
    EXPECT_EQ(pb::compute_metric(w, s, "layer", {pb::Method::wanda, 0.0, true}),
              pb::compute_metric(w, s, "layer", {pb::Method::wanda, 1.0, true}));
}
