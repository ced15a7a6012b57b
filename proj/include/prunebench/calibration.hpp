#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "container.hpp"
#include "digest.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "model.hpp"
#include "numfmt.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace prunebench {

struct CalibConfig {
    std::string corpus_path;
    std::size_t n_samples = 128;
    std::size_t seq_len = 128;
    std::uint64_t seed = 0;
    double damping_fraction = 0.01;

    void validate(const ModelSpec& spec) const {
        if (n_samples < 1) throw error(errc::invalid_argument, "calibration: n_samples must be >= 1");
        if (seq_len < 8 || seq_len > spec.max_seq_len) {
            throw error(errc::invalid_argument, "calibration: seq_len must lie in [8, " +
                                                    std::to_string(spec.max_seq_len) + "], got " +
                                                    std::to_string(seq_len));
        }
        if (!(damping_fraction >= 0.0)) throw error(errc::invalid_argument, "calibration: damping fraction must be >= 0");
    }
};

// JSON-lines corpus, one {"text": ...} object per line. Blank lines are skipped.
inline std::vector<std::string> read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error(errc::io, "cannot open corpus '" + path + "'");
    std::vector<std::string> texts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            texts.push_back(j.at("text").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw error(errc::parse, path + ":" + std::to_string(lineno) + ": malformed corpus line: " + e.what());
        }
    }
    if (texts.empty()) throw error(errc::invalid_argument, "corpus '" + path + "' is empty");
    return texts;
}

struct CalibrationSample {
    std::size_t line = 0;   // index into the corpus
    std::size_t start = 0;  // token offset of the window
    std::vector<TokenId> tokens;
};

// Seeded uniform draw of corpus lines, then a contiguous window of at most
// seq_len tokens from each drawn line.
inline std::vector<CalibrationSample> sample_calibration(const std::vector<std::string>& lines, const Vocabulary& vocab,
                                                         std::size_t n, std::size_t seq_len, std::uint64_t seed) {
    if (lines.empty()) throw error(errc::invalid_argument, "sample_calibration: empty corpus");
    if (seq_len == 0) throw error(errc::invalid_argument, "sample_calibration: seq_len must be positive");
    std::vector<std::size_t> usable;
    std::vector<Tokenized> tokenized(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        tokenized[i] = vocab.tokenize(lines[i]);
        if (tokenized[i].size() > 0) usable.push_back(i);
    }
    if (usable.empty()) throw error(errc::invalid_argument, "sample_calibration: no corpus line yields any tokens");

    Rng rng = Rng::substream(seed, "sampling");
    std::vector<CalibrationSample> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t line = usable[rng.index(usable.size())];
        const auto& ids = tokenized[line].ids;
        CalibrationSample sample;
        sample.line = line;
        if (ids.size() > seq_len) sample.start = rng.index(ids.size() - seq_len + 1);
        const std::size_t len = std::min(seq_len, ids.size());
        sample.tokens.assign(ids.begin() + static_cast<std::ptrdiff_t>(sample.start),
                             ids.begin() + static_cast<std::ptrdiff_t>(sample.start + len));
        out.push_back(std::move(sample));
    }
    return out;
}

inline std::vector<CalibrationSample> sample_calibration(const std::string& corpus_path, const Vocabulary& vocab,
                                                         std::size_t n, std::size_t seq_len, std::uint64_t seed) {
    return sample_calibration(read_corpus(corpus_path), vocab, n, seq_len, seed);
}

// Raw (undamped) accumulators for one linear layer.
struct LayerStats {
    std::vector<double> col_norm_sq;  // sum_t x[t,j]^2
    Matrix gram;                      // sum_t x_t x_t^T

    std::size_t in_features() const noexcept { return col_norm_sq.size(); }
};

struct CalibStats {
    std::map<std::string, LayerStats> layers;
    std::uint64_t token_count = 0;
    std::string fingerprint;
    double damping_fraction = 0.01;

    const LayerStats& layer(const std::string& name) const {
        auto it = layers.find(name);
        if (it == layers.end()) throw error(errc::invalid_argument, "calibration stats have no layer '" + name + "'");
        return it->second;
    }

    // lambda = damping_fraction * mean(diag(raw gram)); applied on read only.
    double lambda(const std::string& name) const {
        const auto& l = layer(name);
        double mean = 0.0;
        for (double v : l.col_norm_sq) mean += v;
        mean /= static_cast<double>(l.in_features());
        return damping_fraction * mean;
    }

    Matrix damped_gram(const std::string& name) const {
        require_tokens();
        Matrix h = layer(name).gram;
        const double lam = lambda(name);
        for (std::size_t i = 0; i < h.rows(); ++i) h(i, i) += lam;
        return h;
    }

    std::vector<double> column_norms(const std::string& name) const {
        require_tokens();
        std::vector<double> out = layer(name).col_norm_sq;
        for (auto& v : out) v = std::sqrt(v);
        return out;
    }

    void require_tokens() const {
        if (token_count == 0) throw error(errc::invalid_argument, "calibration stats hold zero tokens");
    }
};

inline std::string calibration_fingerprint(const std::string& model_fingerprint, const std::string& corpus_sha256,
                                           std::size_t seq_len, std::uint64_t seed, double damping_fraction) {
    nlohmann::json j = {{"model", model_fingerprint},
                        {"corpus", corpus_sha256},
                        {"seq_len", seq_len},
                        {"seed", seed},
                        {"damping_fraction", shortest(damping_fraction)}};
    return sha256_hex(j.dump());
}

inline CalibStats merge_stats(const CalibStats& a, const CalibStats& b) {
    // An accumulator with no layers and no tokens is the identity.
    if (b.layers.empty() && b.token_count == 0) return a;
    if (a.layers.empty() && a.token_count == 0) return b;
    if (a.fingerprint != b.fingerprint) throw error(errc::invalid_argument, "merge_stats: config fingerprint mismatch");
    if (a.damping_fraction != b.damping_fraction) {
        throw error(errc::invalid_argument, "merge_stats: damping fraction mismatch");
    }
    if (a.layers.size() != b.layers.size()) throw error(errc::invalid_argument, "merge_stats: layer sets differ");
    CalibStats out;
    out.fingerprint = a.fingerprint;
    out.damping_fraction = a.damping_fraction;
    out.token_count = a.token_count + b.token_count;
    for (const auto& [name, la] : a.layers) {
        auto it = b.layers.find(name);
        if (it == b.layers.end()) throw error(errc::invalid_argument, "merge_stats: layer '" + name + "' missing");
        const auto& lb = it->second;
        if (la.in_features() != lb.in_features()) {
            throw error(errc::dimension_mismatch, "merge_stats: layer '" + name + "' shapes differ");
        }
        LayerStats m = la;
        for (std::size_t j = 0; j < m.col_norm_sq.size(); ++j) m.col_norm_sq[j] += lb.col_norm_sq[j];
        auto mv = m.gram.values();
        auto bv = lb.gram.values();
        for (std::size_t j = 0; j < mv.size(); ++j) mv[j] += bv[j];
        out.layers.emplace(name, std::move(m));
    }
    return out;
}

// Fixed pairwise tree over the given order: ((s0+s1)+(s2+s3))+...
inline CalibStats merge_all(std::vector<CalibStats> shards) {
    if (shards.empty()) return {};
    while (shards.size() > 1) {
        std::vector<CalibStats> next;
        next.reserve((shards.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < shards.size(); i += 2) next.push_back(merge_stats(shards[i], shards[i + 1]));
        if (shards.size() % 2 == 1) next.push_back(std::move(shards.back()));
        shards = std::move(next);
    }
    return std::move(shards.front());
}

namespace detail {

inline void accumulate_outer(LayerStats& s, const Matrix& x) {
    const std::size_t n = x.cols();
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto r = x.row(t);
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = r[i];
            s.col_norm_sq[i] += xi * xi;
            auto g = s.gram.row(i);
            for (std::size_t j = i; j < n; ++j) g[j] += xi * r[j];
        }
    }
}

inline void mirror_upper(Matrix& g) {
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = i + 1; j < g.cols(); ++j) g(j, i) = g(i, j);
}

inline CalibStats accumulate_shard(const ModelBundle& bundle, std::span<const std::vector<TokenId>> samples,
                                   double damping_fraction, const std::string& fingerprint) {
    // Layers sharing an input site (q/k/v) share one accumulator.
    std::map<std::string, LayerStats> by_site;
    for (const auto& layer : prunable_layers(bundle.spec)) {
        const auto site = input_site_of(layer);
        if (by_site.count(site)) continue;
        const std::size_t in = bundle.tensor(weight_name(layer)).cols();
        by_site.emplace(site, LayerStats{std::vector<double>(in, 0.0), Matrix(in, in)});
    }
    CalibStats out;
    out.fingerprint = fingerprint;
    out.damping_fraction = damping_fraction;
    for (const auto& tokens : samples) {
        if (tokens.empty()) continue;
        std::set<std::string> sites;
        for (const auto& [site, _] : by_site) sites.insert(site);
        auto fwd = forward(bundle, tokens, sites);
        for (auto& [site, stats] : by_site) accumulate_outer(stats, fwd.traces.at(site).values);
        out.token_count += tokens.size();
    }
    for (auto& [site, stats] : by_site) mirror_upper(stats.gram);
    for (const auto& layer : prunable_layers(bundle.spec)) out.layers.emplace(layer, by_site.at(input_site_of(layer)));
    return out;
}

}  // namespace detail

inline constexpr std::size_t calibration_shard_size = 8;

// Samples are put in canonical (lexicographic) order, split into fixed-size
// shards, accumulated in parallel and merged in shard order, so the result is
// bit-stable regardless of worker count or input sample order.
inline CalibStats accumulate_stats(const ModelBundle& bundle, std::vector<std::vector<TokenId>> samples,
                                   double damping_fraction, const std::string& fingerprint = {},
                                   std::size_t workers = 0) {
    if (samples.empty()) throw error(errc::invalid_argument, "accumulate_stats: no samples");
    if (!(damping_fraction >= 0.0)) throw error(errc::invalid_argument, "accumulate_stats: negative damping fraction");
    std::sort(samples.begin(), samples.end());
    const std::size_t n_shards = (samples.size() + calibration_shard_size - 1) / calibration_shard_size;
    std::vector<CalibStats> shards(n_shards);
    parallel_for(
        n_shards,
        [&](std::size_t s) {
            const std::size_t begin = s * calibration_shard_size;
            const std::size_t end = std::min(samples.size(), begin + calibration_shard_size);
            shards[s] = detail::accumulate_shard(
                bundle, std::span<const std::vector<TokenId>>(samples).subspan(begin, end - begin), damping_fraction,
                fingerprint);
        },
        workers);
    CalibStats out = merge_all(std::move(shards));
    if (out.token_count == 0) throw error(errc::invalid_argument, "accumulate_stats: samples hold zero tokens");
    return out;
}

inline std::vector<std::vector<TokenId>> sample_tokens(const std::vector<CalibrationSample>& samples) {
    std::vector<std::vector<TokenId>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.tokens);
    return out;
}

// ---------------------------------------------------------------------------
// Stats file: framed container, payload per layer = col_norm_sq then gram (f64).

inline constexpr std::string_view stats_magic = "PBSTATS1";

inline std::vector<std::uint8_t> serialize_stats(const CalibStats& s) {
    nlohmann::json header;
    header["format"] = "pbstats";
    header["version"] = 1;
    header["token_count"] = s.token_count;
    header["fingerprint"] = s.fingerprint;
    header["damping_fraction"] = s.damping_fraction;
    auto layers = nlohmann::json::array();
    ByteWriter payload;
    for (const auto& [name, l] : s.layers) {
        layers.push_back({{"name", name}, {"in_features", l.in_features()}});
        for (double v : l.col_norm_sq) payload.f64(v);
        for (double v : l.gram.values()) payload.f64(v);
    }
    header["layers"] = layers;
    return encode_framed(stats_magic, header, payload.bytes());
}

inline void save_stats(const CalibStats& s, const std::string& path) { write_file_bytes(path, serialize_stats(s)); }

inline CalibStats load_stats(const std::string& path) {
    auto framed = decode_framed(
        read_file_bytes(path), stats_magic,
        [](const nlohmann::json& h) {
            std::size_t total = 0;
            for (const auto& l : h.at("layers")) {
                const auto n = l.at("in_features").get<std::size_t>();
                total += (n + n * n) * 8;
            }
            return total;
        },
        path);
    CalibStats s;
    try {
        s.token_count = framed.header.at("token_count").get<std::uint64_t>();
        s.fingerprint = framed.header.at("fingerprint").get<std::string>();
        s.damping_fraction = framed.header.at("damping_fraction").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::bad_header, path + ": malformed stats header: " + e.what());
    }
    ByteReader r(framed.payload);
    for (const auto& l : framed.header.at("layers")) {
        const auto n = l.at("in_features").get<std::size_t>();
        LayerStats ls{std::vector<double>(n), Matrix(n, n)};
        for (auto& v : ls.col_norm_sq) v = r.f64();
        for (auto& v : ls.gram.values()) v = r.f64();
        if (!ls.gram.all_finite()) throw error(errc::invalid_argument, path + ": non-finite gram entries");
        s.layers.emplace(l.at("name").get<std::string>(), std::move(ls));
    }
    return s;
}

}  // namespace prunebench
