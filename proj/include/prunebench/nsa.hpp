#pragma once

// Neuron semantic attribution.
//
// Given influential words for a task, every neuron n of an activation site is
// scored by the share of its activation mass that lands on influential-word
// tokens, pooled over all samples:
//
//     score(n) = sum_samples sum_{t in S} |A[t,n]|  /  sum_samples sum_t |A[t,n]|
//
// The top-k neurons are matched to the influential words on which their mean
// |A| is highest, and the same texts are then replayed through a pruned model
// to measure how much each matched word's activation dropped.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "error.hpp"
#include "log.hpp"
#include "matrix.hpp"
#include "model.hpp"

namespace prunebench {

enum class LexiconProvenance { user_file, external_suggester };

inline const char* to_string(LexiconProvenance p) {
    return p == LexiconProvenance::user_file ? "user_file" : "external_suggester";
}

struct InfluentialLexicon {
    std::string task;
    std::vector<std::string> words;
    LexiconProvenance provenance = LexiconProvenance::user_file;
};

inline std::string lowercase(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Lowercases words; duplicates are an error unless `dedupe` is set, in which
// case later repeats are dropped.
inline InfluentialLexicon make_lexicon(std::string task, const std::vector<std::string>& words,
                                       LexiconProvenance provenance, bool dedupe = false) {
    InfluentialLexicon lex{std::move(task), {}, provenance};
    std::set<std::string> seen;
    for (const auto& w : words) {
        auto lw = lowercase(w);
        if (lw.empty()) throw error(errc::invalid_argument, "lexicon: empty word");
        if (!seen.insert(lw).second) {
            if (dedupe) continue;
            throw error(errc::invalid_argument, "lexicon: duplicate word '" + lw + "'");
        }
        lex.words.push_back(std::move(lw));
    }
    if (lex.words.empty()) throw error(errc::invalid_argument, "lexicon: word list is empty");
    return lex;
}

inline InfluentialLexicon load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error(errc::io, "cannot open lexicon '" + path + "'");
    try {
        auto j = nlohmann::json::parse(in);
        auto prov = LexiconProvenance::user_file;
        if (j.contains("provenance") && j.at("provenance").get<std::string>() == "external_suggester") {
            prov = LexiconProvenance::external_suggester;
        }
        return make_lexicon(j.at("task").get<std::string>(), j.at("words").get<std::vector<std::string>>(), prov);
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse, path + ": malformed lexicon: " + e.what());
    }
}

inline void save_lexicon(const InfluentialLexicon& lex, const std::string& path) {
    nlohmann::json j = {{"task", lex.task}, {"words", lex.words}, {"provenance", to_string(lex.provenance)}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw error(errc::io, "cannot write lexicon '" + path + "'");
    out << j.dump(2) << '\n';
}

// Positions whose (lowercased) token string is a lexicon word.
inline std::vector<std::size_t> token_membership(const Tokenized& tokens, const InfluentialLexicon& lex) {
    std::set<std::string> words(lex.words.begin(), lex.words.end());
    std::vector<std::size_t> s;
    for (std::size_t t = 0; t < tokens.words.size(); ++t)
        if (words.count(tokens.words[t])) s.push_back(t);
    return s;
}

struct NeuronScores {
    std::vector<double> score;
    std::vector<std::size_t> zero_denominator;  // neurons whose total activation is 0 (score 0)
};

// activations[s] is (tokens x neurons) for sample s, influential[s] its S.
// With signed_sum the raw activations are summed instead of |A|.
inline NeuronScores score_neurons(std::span<const Matrix> activations,
                                  std::span<const std::vector<std::size_t>> influential, bool signed_sum = false) {
    if (activations.size() != influential.size()) {
        throw error(errc::dimension_mismatch, "score_neurons: one token set is needed per sample");
    }
    if (activations.empty()) throw error(errc::invalid_argument, "score_neurons: no samples");
    const std::size_t n = activations.front().cols();
    std::vector<double> num(n, 0.0), den(n, 0.0);
    bool any_s = false;
    for (std::size_t s = 0; s < activations.size(); ++s) {
        const auto& a = activations[s];
        if (a.cols() != n) throw error(errc::dimension_mismatch, "score_neurons: neuron counts differ across samples");
        std::vector<bool> in_s(a.rows(), false);
        for (std::size_t t : influential[s]) {
            if (t >= a.rows()) throw error(errc::invalid_argument, "score_neurons: token position out of range");
            in_s[t] = true;
            any_s = true;
        }
        for (std::size_t t = 0; t < a.rows(); ++t) {
            auto r = a.row(t);
            for (std::size_t j = 0; j < n; ++j) {
                const double v = signed_sum ? r[j] : std::abs(r[j]);
                den[j] += v;
                if (in_s[t]) num[j] += v;
            }
        }
    }
    if (!any_s) log::warn("score_neurons: no influential-word tokens in any sample; all scores are 0");
    NeuronScores out;
    out.score.resize(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (den[j] == 0.0) {
            out.zero_denominator.push_back(j);
        } else {
            out.score[j] = num[j] / den[j];
        }
    }
    return out;
}

struct WordMatch {
    std::string word;
    std::size_t occurrences = 0;
    double dense_mean = 0.0;
    std::optional<double> pruned_mean;
    std::optional<double> drop_ratio;  // empty when dense_mean == 0
    bool significant = false;
};

struct TokenActivations {
    std::vector<std::string> tokens;
    std::vector<bool> influential;
    std::vector<double> dense;
    std::vector<double> pruned;
};

struct AttributionRecord {
    std::string site;
    std::size_t neuron = 0;
    double score = 0.0;
    std::vector<WordMatch> matched_words;
    std::vector<TokenActivations> per_token;  // one entry per sample
};

struct NsaSample {
    std::string text;
    Tokenized tokens;
    std::vector<std::size_t> influential;
};

inline std::vector<NsaSample> prepare_samples(const Vocabulary& vocab, const std::vector<std::string>& texts,
                                              const InfluentialLexicon& lex, std::size_t max_len) {
    std::vector<NsaSample> out;
    for (const auto& t : texts) {
        NsaSample s{t, vocab.tokenize(t, max_len), {}};
        if (s.tokens.size() == 0) continue;
        s.influential = token_membership(s.tokens, lex);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw error(errc::invalid_argument, "nsa: no sample produced any tokens");
    return out;
}

namespace detail {

// Mean |A| of one neuron over every occurrence of `word` among influential positions.
inline std::pair<double, std::size_t> word_mean(const std::vector<NsaSample>& samples,
                                                std::span<const Matrix> acts, std::size_t neuron,
                                                const std::string& word) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < samples.size(); ++s)
        for (std::size_t t : samples[s].influential)
            if (samples[s].tokens.words[t] == word) {
                sum += std::abs(acts[s](t, neuron));
                ++count;
            }
    return {count ? sum / static_cast<double>(count) : 0.0, count};
}

}  // namespace detail

// Top-k neurons by score (lower index on ties), each matched to its
// words_per_neuron lexicon words of highest mean |A| (lexicon order on ties).
inline std::vector<AttributionRecord> select_and_match(const NeuronScores& scores, std::span<const Matrix> dense_acts,
                                                       const std::vector<NsaSample>& samples,
                                                       const InfluentialLexicon& lex, const std::string& site,
                                                       std::size_t k, std::size_t words_per_neuron) {
    if (k == 0) throw error(errc::invalid_argument, "select_and_match: k must be >= 1");
    if (dense_acts.size() != samples.size()) {
        throw error(errc::dimension_mismatch, "select_and_match: activations/samples count mismatch");
    }
    const std::size_t n = scores.score.size();
    if (k > n) {
        log::warn("select_and_match: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " neurons; clamped");
        k = n;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores.score[a] > scores.score[b]; });

    std::vector<AttributionRecord> records;
    for (std::size_t r = 0; r < k; ++r) {
        AttributionRecord rec;
        rec.site = site;
        rec.neuron = order[r];
        rec.score = scores.score[rec.neuron];
        std::vector<WordMatch> candidates;
        for (const auto& word : lex.words) {
            auto [mean, count] = detail::word_mean(samples, dense_acts, rec.neuron, word);
            if (count == 0) continue;
            candidates.push_back(WordMatch{.word = word, .occurrences = count, .dense_mean = mean});
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const WordMatch& a, const WordMatch& b) { return a.dense_mean > b.dense_mean; });
        if (candidates.size() > words_per_neuron) candidates.resize(words_per_neuron);
        rec.matched_words = std::move(candidates);
        for (std::size_t s = 0; s < samples.size(); ++s) {
            TokenActivations ta;
            ta.tokens = samples[s].tokens.words;
            ta.influential.assign(ta.tokens.size(), false);
            for (std::size_t t : samples[s].influential) ta.influential[t] = true;
            for (std::size_t t = 0; t < ta.tokens.size(); ++t) ta.dense.push_back(dense_acts[s](t, rec.neuron));
            rec.per_token.push_back(std::move(ta));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::vector<Matrix> site_activations(const ModelBundle& bundle, const std::vector<NsaSample>& samples,
                                            const std::string& site) {
    std::vector<Matrix> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(forward(bundle, s.tokens.ids, {site}).traces.at(site).values);
    return out;
}

// Records the pruned mean |A| of a matched word and its relative drop; the
// drop is left undefined when the dense mean is 0.
inline void assess_drop(WordMatch& wm, double pruned_mean, double significance_threshold = 0.5) {
    wm.pruned_mean = pruned_mean;
    if (wm.dense_mean > 0.0) {
        wm.drop_ratio = 1.0 - pruned_mean / wm.dense_mean;
        wm.significant = *wm.drop_ratio >= significance_threshold;
    } else {
        wm.drop_ratio.reset();
        wm.significant = false;
    }
}

// Fills the pruned side of every record by replaying the same samples.
inline void compare_pruned(std::vector<AttributionRecord>& records, const ModelSpec& dense_spec,
                           const ModelBundle& pruned, const std::vector<NsaSample>& samples,
                           double significance_threshold = 0.5) {
    if (!(dense_spec == pruned.spec)) throw error(errc::invalid_argument, "compare_pruned: model specs differ");
    std::map<std::string, std::vector<Matrix>> acts;
    for (const auto& rec : records)
        if (!acts.count(rec.site)) acts.emplace(rec.site, site_activations(pruned, samples, rec.site));
    for (auto& rec : records) {
        const auto& pa = acts.at(rec.site);
        if (rec.per_token.size() != samples.size()) {
            throw error(errc::invalid_argument, "compare_pruned: records were built from different samples");
        }
        for (std::size_t s = 0; s < samples.size(); ++s) {
            auto& ta = rec.per_token[s];
            ta.pruned.clear();
            for (std::size_t t = 0; t < ta.tokens.size(); ++t) ta.pruned.push_back(pa[s](t, rec.neuron));
        }
        for (auto& wm : rec.matched_words)
            assess_drop(wm, detail::word_mean(samples, pa, rec.neuron, wm.word).first, significance_threshold);
    }
}

struct NsaOptions {
    std::string site = "layer.0.mlp.act";
    std::size_t top_k = 8;
    std::size_t words_per_neuron = 2;
    double significance_threshold = 0.5;
    bool signed_sum = false;
    std::size_t max_samples = 10;
};

struct NsaReport {
    NsaOptions options;
    std::string task;
    std::vector<AttributionRecord> records;
    std::vector<std::size_t> zero_denominator_neurons;
    std::size_t n_samples = 0;
};

inline NsaReport run_nsa(const ModelBundle& dense, const ModelBundle& pruned, std::vector<std::string> texts,
                         const InfluentialLexicon& lex, const NsaOptions& opt) {
    if (!is_valid_site(dense.spec, opt.site)) throw error(errc::invalid_argument, "nsa: unknown site '" + opt.site + "'");
    if (texts.size() > opt.max_samples) texts.resize(opt.max_samples);
    const auto samples = prepare_samples(dense.vocabulary(), texts, lex, dense.spec.max_seq_len);
    const auto acts = site_activations(dense, samples, opt.site);
    std::vector<std::vector<std::size_t>> s_sets;
    for (const auto& s : samples) s_sets.push_back(s.influential);
    const auto scores = score_neurons(acts, s_sets, opt.signed_sum);
    NsaReport rep;
    rep.options = opt;
    rep.task = lex.task;
    rep.n_samples = samples.size();
    rep.zero_denominator_neurons = scores.zero_denominator;
    rep.records = select_and_match(scores, acts, samples, lex, opt.site, opt.top_k, opt.words_per_neuron);
    compare_pruned(rep.records, dense.spec, pruned, samples, opt.significance_threshold);
    return rep;
}

inline nlohmann::json to_json(const AttributionRecord& r) {
    auto words = nlohmann::json::array();
    for (const auto& w : r.matched_words) {
        words.push_back({{"word", w.word},
                         {"occurrences", w.occurrences},
                         {"dense_mean_abs", w.dense_mean},
                         {"pruned_mean_abs", w.pruned_mean ? nlohmann::json(*w.pruned_mean) : nlohmann::json(nullptr)},
                         {"drop_ratio", w.drop_ratio ? nlohmann::json(*w.drop_ratio) : nlohmann::json(nullptr)},
                         {"drop_undefined", !w.drop_ratio.has_value()},
                         {"significant", w.significant}});
    }
    auto samples = nlohmann::json::array();
    for (const auto& t : r.per_token) {
        samples.push_back({{"tokens", t.tokens}, {"influential", t.influential}, {"dense", t.dense}, {"pruned", t.pruned}});
    }
    return {{"site", r.site}, {"neuron", r.neuron}, {"score", r.score}, {"matched_words", words}, {"per_token", samples}};
}

inline nlohmann::json to_json(const NsaReport& rep) {
    auto records = nlohmann::json::array();
    for (const auto& r : rep.records) records.push_back(to_json(r));
    return {{"task", rep.task},
            {"site", rep.options.site},
            {"top_k", rep.options.top_k},
            {"words_per_neuron", rep.options.words_per_neuron},
            {"significance_threshold", rep.options.significance_threshold},
            {"aggregation", rep.options.signed_sum ? "signed" : "absolute"},
            {"n_samples", rep.n_samples},
            {"zero_denominator_neurons", rep.zero_denominator_neurons},
            {"records", records}};
}

}  // namespace prunebench
