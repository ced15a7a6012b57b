#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "prunebench/matrix.hpp"
#include "prunebench/model.hpp"
#include "prunebench/rng.hpp"

namespace testing_support {

namespace pb = prunebench;

inline std::string fixture(const std::string& rel) { return std::string(PRUNEBENCH_FIXTURE_DIR) + "/" + rel; }

inline std::string cli_path() { return PRUNEBENCH_CLI; }

inline pb::Matrix random_matrix(std::size_t rows, std::size_t cols, pb::Rng& rng, double scale = 1.0) {
    pb::Matrix m(rows, cols);
    for (auto& v : m.values()) v = scale * rng.normal();
    return m;
}

// X^T X + eps*I for a random X with more rows than columns.
inline pb::Matrix random_spd(std::size_t n, pb::Rng& rng, double eps = 1e-3) {
    const auto x = random_matrix(2 * n + 3, n, rng);
    pb::Matrix h(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < x.rows(); ++t) s += x(t, i) * x(t, j);
            h(i, j) = s + (i == j ? eps : 0.0);
        }
    return h;
}

inline double rel_diff(double a, double b) {
    const double d = std::abs(a - b);
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? 0.0 : d / s;
}

inline double max_rel_diff(const pb::Matrix& a, const pb::Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_diff(a.values()[i], b.values()[i]));
    return m;
}

inline std::shared_ptr<const pb::Vocabulary> small_vocab() {
    std::vector<std::string> t = {"<unk>", "<bos>", "the", "food", "was", "badly", "damaged", ".", "good",
                                  "bad", "i", "trust", "it", "honestly", "not", "a", "b", "c"};
    for (int i = 0; i < 14; ++i) t.push_back("w" + std::to_string(i));
    return std::make_shared<const pb::Vocabulary>(t);
}

inline pb::ModelSpec small_spec() { return {2, 16, 2, 32, 32, 16}; }

inline pb::ModelBundle small_bundle(std::uint64_t seed = 1) {
    return pb::random_bundle(small_spec(), small_vocab(), seed);
}

inline const pb::ModelBundle& fixture_model() {
    static const pb::ModelBundle b = pb::load_bundle(fixture("tiny-2L.pbw"));
    return b;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("prunebench-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace testing_support
