#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "prunebench/calibration.hpp"
#include "prunebench/nsa.hpp"
#include "prunebench/suggester.hpp"
#include "support.hpp"

namespace pb = prunebench;
using namespace testing_support;

namespace {

pb::InfluentialLexicon lexicon(std::vector<std::string> words) {
    return pb::make_lexicon("sentiment", words, pb::LexiconProvenance::user_file);
}

std::vector<std::string> fixture_texts() { return pb::read_corpus(fixture("nsa/sentiment_samples.jsonl")); }

// Direct evaluation of the pooled ratio, written independently of score_neurons.
double oracle_score(const std::vector<pb::Matrix>& acts, const std::vector<std::vector<std::size_t>>& s, std::size_t j) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < acts.size(); ++k) {
        for (std::size_t t = 0; t < acts[k].rows(); ++t) {
            den += std::fabs(acts[k](t, j));
            if (std::find(s[k].begin(), s[k].end(), t) != s[k].end()) num += std::fabs(acts[k](t, j));
        }
    }
    return den == 0.0 ? 0.0 : num / den;
}

}  // namespace

TEST(Lexicon, FixtureLoadsFourWords) {
    const auto lex = pb::load_lexicon(fixture("lexicons/sentiment.json"));
    EXPECT_EQ(lex.task, "sentiment");
    EXPECT_EQ(lex.words, (std::vector<std::string>{"badly", "damaged", "trust", "honestly"}));
    EXPECT_EQ(lex.provenance, pb::LexiconProvenance::user_file);
}

TEST(Lexicon, DuplicateRejected) { EXPECT_THROW(lexicon({"badly", "badly"}), pb::error); }

TEST(Lexicon, CaseFoldedDuplicateRejected) { EXPECT_THROW(lexicon({"Badly", "badly"}), pb::error); }

TEST(Lexicon, UppercaseLowered) { EXPECT_EQ(lexicon({"Trust", "HONESTLY"}).words, (std::vector<std::string>{"trust", "honestly"})); }

TEST(Lexicon, EmptyRejected) {
    TempDir dir("lex");
    std::ofstream(dir / "e.json") << R"({"task":"sentiment","words":[]})";
    EXPECT_THROW(pb::load_lexicon(dir / "e.json"), pb::error);
    std::ofstream(dir / "bad.json") << R"({"task":"sentiment"})";
    try {
        pb::load_lexicon(dir / "bad.json");
        FAIL();
    } catch (const pb::error& e) {
        EXPECT_EQ(pb::exit_code(e.code()), 2);
    }
}

TEST(Lexicon, SaveLoadRoundTrip) {
    TempDir dir("lexrt");
    const auto lex = pb::make_lexicon("qa", {"why", "because"}, pb::LexiconProvenance::external_suggester);
    pb::save_lexicon(lex, dir / "l.json");
    const auto back = pb::load_lexicon(dir / "l.json");
    EXPECT_EQ(back.words, lex.words);
    EXPECT_EQ(back.provenance, pb::LexiconProvenance::external_suggester);
}

TEST(Membership, PositionalMatch) {
    const auto t = fixture_model().vocabulary().tokenize("the food was badly damaged");
    EXPECT_EQ(pb::token_membership(t, lexicon({"badly", "damaged"})), (std::vector<std::size_t>{3, 4}));
}

TEST(Membership, AbsentWordGivesEmptySet) {
    const auto t = small_vocab()->tokenize("the food was good");
    EXPECT_TRUE(pb::token_membership(t, lexicon({"badly"})).empty());
}

TEST(Membership, PunctuationAdjacentStillMatched) {
    const auto t = small_vocab()->tokenize("it was badly.");
    EXPECT_EQ(t.words.back(), ".");
    EXPECT_EQ(pb::token_membership(t, lexicon({"badly"})), (std::vector<std::size_t>{2}));
}

TEST(Score, SingleNeuronExample) {
    const std::vector<pb::Matrix> acts = {pb::Matrix{{0.1}, {0.3}, {0.6}}};
    const std::vector<std::vector<std::size_t>> s = {{2}};
    EXPECT_NEAR(pb::score_neurons(acts, s).score[0], 0.6, 1e-15);
}

TEST(Score, SignedActivationsUseAbsoluteValues) {
    const std::vector<pb::Matrix> acts = {pb::Matrix{{-0.5}, {0.5}}};
    const std::vector<std::vector<std::size_t>> s = {{0}};
    EXPECT_DOUBLE_EQ(pb::score_neurons(acts, s).score[0], 0.5);
    EXPECT_DOUBLE_EQ(pb::score_neurons(acts, s, /*signed_sum=*/true).score[0], 0.0);
}

TEST(Score, FullAndEmptySets) {
    pb::Rng rng(111);
    std::vector<pb::Matrix> acts;
    std::vector<std::vector<std::size_t>> all, none;
    for (int k = 0; k < 3; ++k) {
        acts.push_back(random_matrix(4 + k, 5, rng));
        all.emplace_back();
        for (std::size_t t = 0; t < acts.back().rows(); ++t) all.back().push_back(t);
        none.emplace_back();
    }
    for (double v : pb::score_neurons(acts, all).score) EXPECT_DOUBLE_EQ(v, 1.0);
    for (double v : pb::score_neurons(acts, none).score) EXPECT_EQ(v, 0.0);
}

TEST(Score, ZeroColumnFlagged) {
    const std::vector<pb::Matrix> acts = {pb::Matrix{{0.0, 1.0}, {0.0, 2.0}}};
    const std::vector<std::vector<std::size_t>> s = {{0}};
    const auto r = pb::score_neurons(acts, s);
    EXPECT_EQ(r.score[0], 0.0);
    EXPECT_EQ(r.zero_denominator, (std::vector<std::size_t>{0}));
}

TEST(Score, PooledOracleBoundsScaleAndMonotonicity) {
    pb::Rng rng(112);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<pb::Matrix> acts;
        std::vector<std::vector<std::size_t>> s, bigger;
        const std::size_t n = 1 + rng.index(6);
        for (std::size_t k = 0, samples = 1 + rng.index(4); k < samples; ++k) {
            acts.push_back(random_matrix(1 + rng.index(8), n, rng));
            s.emplace_back();
            bigger.emplace_back();
            for (std::size_t t = 0; t < acts.back().rows(); ++t) {
                const double u = rng.uniform();
                if (u < 0.3) s.back().push_back(t);
                if (u < 0.6) bigger.back().push_back(t);
            }
        }
        const auto base = pb::score_neurons(acts, s).score;
        const auto grown = pb::score_neurons(acts, bigger).score;
        auto scaled = acts;
        const double c = rng.uniform(0.1, 10.0);
        for (auto& m : scaled)
            for (auto& v : m.values()) v *= c;
        const auto rescaled = pb::score_neurons(scaled, s).score;
        for (std::size_t j = 0; j < n; ++j) {
            EXPECT_LE(rel_diff(base[j], oracle_score(acts, s, j)), 1e-12);
            EXPECT_GE(base[j], 0.0);
            EXPECT_LE(base[j], 1.0);
            EXPECT_GE(grown[j], base[j] - 1e-12);
            EXPECT_LE(rel_diff(rescaled[j], base[j]), 1e-12);
        }
    }
}

TEST(Select, ArgmaxAndTieRule) {
    pb::NeuronScores scores{{0.1, 0.9, 0.4}, {}};
    const auto lex = lexicon({"badly"});
    const auto samples = pb::prepare_samples(*small_vocab(), {"it was badly damaged"}, lex, 16);
    const std::vector<pb::Matrix> acts = {pb::Matrix(4, 3)};
    auto recs = pb::select_and_match(scores, acts, samples, lex, "layer.0.mlp.act", 1, 1);
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].neuron, 1u);

    pb::NeuronScores equal{{0.5, 0.5, 0.5}, {}};
    recs = pb::select_and_match(equal, acts, samples, lex, "layer.0.mlp.act", 2, 1);
    EXPECT_EQ(recs[0].neuron, 0u);
    EXPECT_EQ(recs[1].neuron, 1u);
    EXPECT_THROW(pb::select_and_match(equal, acts, samples, lex, "x", 0, 1), pb::error);
    EXPECT_EQ(pb::select_and_match(equal, acts, samples, lex, "x", 10, 1).size(), 3u);
}

TEST(Select, MatchesWordWithHigherMeanActivation) {
    const auto lex = lexicon({"damaged", "badly"});
    const auto samples = pb::prepare_samples(*small_vocab(), {"the food was badly damaged"}, lex, 16);
    pb::Matrix a(5, 1);
    a(3, 0) = -0.21;  // badly
    a(4, 0) = 0.05;   // damaged
    const std::vector<pb::Matrix> acts = {a};
    const auto recs = pb::select_and_match({{1.0}, {}}, acts, samples, lex, "s", 1, 1);
    ASSERT_EQ(recs[0].matched_words.size(), 1u);
    EXPECT_EQ(recs[0].matched_words[0].word, "badly");
    EXPECT_DOUBLE_EQ(recs[0].matched_words[0].dense_mean, 0.21);
}

TEST(Compare, DropExampleIsSignificant) {
    pb::WordMatch wm{.word = "badly", .occurrences = 1, .dense_mean = 0.2112};
    pb::assess_drop(wm, 0.0084);
    ASSERT_TRUE(wm.drop_ratio.has_value());
    EXPECT_NEAR(*wm.drop_ratio, 1.0 - 0.0084 / 0.2112, 1e-12);
    EXPECT_NEAR(*wm.drop_ratio, 0.960, 5e-4);
    EXPECT_TRUE(wm.significant);
}

TEST(Compare, ZeroDenseMeanLeavesDropUndefined) {
    pb::WordMatch wm{.word = "x", .occurrences = 1, .dense_mean = 0.0};
    pb::assess_drop(wm, 0.0);
    EXPECT_FALSE(wm.drop_ratio.has_value());
    EXPECT_FALSE(wm.significant);
}

TEST(Compare, SelfComparisonDropsNothing) {
    const auto& b = fixture_model();
    const auto lex = pb::load_lexicon(fixture("lexicons/sentiment.json"));
    const auto rep = pb::run_nsa(b, b, fixture_texts(), lex, {});
    ASSERT_FALSE(rep.records.empty());
    for (const auto& r : rep.records) {
        EXPECT_GE(r.score, 0.0);
        EXPECT_LE(r.score, 1.0);
        for (const auto& w : r.matched_words) {
            ASSERT_TRUE(w.drop_ratio.has_value());
            EXPECT_EQ(*w.drop_ratio, 0.0);
            EXPECT_FALSE(w.significant);
        }
        for (const auto& t : r.per_token) EXPECT_EQ(t.dense, t.pruned);
    }
}

TEST(Compare, SilencedNeuronDropsFully) {
    const auto& b = fixture_model();
    const auto lex = pb::load_lexicon(fixture("lexicons/sentiment.json"));
    const auto self = pb::run_nsa(b, b, fixture_texts(), lex, {.top_k = 1});
    ASSERT_EQ(self.records.size(), 1u);
    const auto neuron = self.records[0].neuron;
    pb::Matrix fc1 = b.tensor("layer.0.mlp.fc1.weight");
    for (std::size_t c = 0; c < fc1.cols(); ++c) fc1(neuron, c) = 0.0;
    const auto pruned = pb::apply_weights(b, {{"layer.0.mlp.fc1.weight", fc1}});
    const auto rep = pb::run_nsa(b, pruned, fixture_texts(), lex, {.top_k = 1});
    ASSERT_EQ(rep.records[0].neuron, neuron);
    ASSERT_FALSE(rep.records[0].matched_words.empty());
    for (const auto& w : rep.records[0].matched_words) {
        EXPECT_EQ(*w.drop_ratio, 1.0);
        EXPECT_TRUE(w.significant);
    }
}

TEST(Compare, SpecMismatchRejected) {
    const auto& b = fixture_model();
    const auto lex = pb::load_lexicon(fixture("lexicons/sentiment.json"));
    EXPECT_THROW(pb::run_nsa(b, small_bundle(), fixture_texts(), lex, {}), pb::error);
}

TEST(RunNsa, RepeatableAndCapsSamples) {
    const auto& b = fixture_model();
    const auto lex = pb::load_lexicon(fixture("lexicons/sentiment.json"));
    const auto a = pb::to_json(pb::run_nsa(b, b, fixture_texts(), lex, {.max_samples = 3})).dump();
    const auto c = pb::to_json(pb::run_nsa(b, b, fixture_texts(), lex, {.max_samples = 3})).dump();
    EXPECT_EQ(a, c);
    EXPECT_EQ(nlohmann::json::parse(a).at("n_samples"), 3);
    EXPECT_THROW(pb::run_nsa(b, b, fixture_texts(), lex, {.site = "layer.9.mlp.act"}), pb::error);
}

TEST(Suggester, UnsetEndpointUnavailable) {
    try {
        pb::suggest_words("", "sentiment", {"x"});
        FAIL();
    } catch (const pb::error& e) {
        EXPECT_EQ(e.code(), pb::errc::unavailable);
    }
}

TEST(Suggester, UnreachableEndpointIsNetworkError) {
    try {
        pb::suggest_words("http://127.0.0.1:1", "sentiment", {"x"}, 1);
        FAIL();
    } catch (const pb::error& e) {
        EXPECT_EQ(e.code(), pb::errc::network);
        EXPECT_NE(std::string(e.what()).find("lexicon"), std::string::npos);
    }
}

TEST(Suggester, MockEndpointPersistsLexicon) {
    httplib::Server server;
    nlohmann::json seen;
    server.Post("/suggest", [&](const httplib::Request& req, httplib::Response& res) {
        seen = nlohmann::json::parse(req.body);
        res.set_content(R"({"words":["badly","Badly","badly"]})", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const auto words =
        pb::suggest_words("http://127.0.0.1:" + std::to_string(port) + "/suggest", "sentiment", {"it was badly done"});
    server.stop();
    th.join();
    EXPECT_EQ(seen.at("task"), "sentiment");
    EXPECT_EQ(seen.at("samples").size(), 1u);

    TempDir dir("suggest");
    const auto lex = pb::materialize_suggestions("sentiment", words, dir / "lex.json");
    EXPECT_EQ(lex.words, (std::vector<std::string>{"badly"}));
    const auto back = pb::load_lexicon(dir / "lex.json");
    EXPECT_EQ(back.words, lex.words);
    EXPECT_EQ(back.provenance, pb::LexiconProvenance::external_suggester);
}
