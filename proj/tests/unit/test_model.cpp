#include <gtest/gtest.h>

#include "prunebench/model.hpp"
#include "support.hpp"

namespace pb = prunebench;
using namespace testing_support;

TEST(Tokenize, WordSpans) {
    const auto t = fixture_model().vocabulary().tokenize("the food was badly damaged");
    ASSERT_EQ(t.size(), 5u);
    const std::vector<std::pair<std::size_t, std::size_t>> spans = {{0, 3}, {4, 8}, {9, 12}, {13, 18}, {19, 26}};
    EXPECT_EQ(t.spans, spans);
    EXPECT_EQ(t.words, (std::vector<std::string>{"the", "food", "was", "badly", "damaged"}));
}

TEST(Tokenize, EmptyText) {
    const auto t = small_vocab()->tokenize("");
    EXPECT_EQ(t.size(), 0u);
    EXPECT_TRUE(t.spans.empty());
}

TEST(Tokenize, UnknownWordKeepsSpan) {
    const auto t = small_vocab()->tokenize("the zyzzyva");
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t.ids[1], pb::Vocabulary::unk_id);
    EXPECT_EQ(t.spans[1], (std::pair<std::size_t, std::size_t>{4, 11}));
}

TEST(Tokenize, PunctuationSplitsAndCaseFolds) {
    const auto t = small_vocab()->tokenize("Badly.");
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t.words, (std::vector<std::string>{"badly", "."}));
    EXPECT_EQ(t.ids[0], small_vocab()->lookup("badly"));
}

TEST(Tokenize, MaxLenTruncates) { EXPECT_EQ(small_vocab()->tokenize("a b c a b c", 4).size(), 4u); }

TEST(Vocabulary, LookupRenderRoundTrip) {
    const auto& v = fixture_model().vocabulary();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto id = static_cast<pb::TokenId>(i);
        EXPECT_EQ(v.lookup(v.render(id)), id);
    }
}

TEST(Vocabulary, DuplicatesAndMissingSpecialsRejected) {
    EXPECT_THROW(pb::Vocabulary({"<unk>", "<bos>", "a", "a"}), pb::error);
    EXPECT_THROW(pb::Vocabulary({"a", "<bos>"}), pb::error);
}

TEST(Vocabulary, FileMatchesEmbeddedVocabulary) {
    const auto v = pb::load_vocabulary(fixture("vocab.txt"));
    EXPECT_EQ(v.tokens(), fixture_model().vocabulary().tokens());
}

TEST(Forward, NoCaptureMeansNoTraces) {
    const auto b = small_bundle();
    const std::vector<pb::TokenId> ids = {2, 3, 4};
    const auto r = pb::forward(b, ids);
    EXPECT_TRUE(r.traces.empty());
    EXPECT_EQ(r.logits.rows(), 3u);
    EXPECT_EQ(r.logits.cols(), b.spec.vocab_size);
}

TEST(Forward, RepeatedCallsBitIdentical) {
    const auto& b = fixture_model();
    const auto ids = b.vocabulary().tokenize("the phone arrived badly damaged .").ids;
    EXPECT_EQ(pb::forward(b, ids).logits, pb::forward(b, ids).logits);
}

TEST(Forward, FixtureMlpTraceShape) {
    const auto& b = fixture_model();
    const std::vector<pb::TokenId> ids = {5, 6, 7, 8, 9};
    const auto r = pb::forward(b, ids, {"layer.0.mlp.act"});
    const auto& tr = r.traces.at("layer.0.mlp.act");
    EXPECT_EQ(tr.values.rows(), 5u);
    EXPECT_EQ(tr.values.cols(), 256u);
    EXPECT_EQ(tr.tokens, ids);
}

TEST(Forward, UnknownSiteListsValidSites) {
    try {
        pb::forward(small_bundle(), std::vector<pb::TokenId>{2}, {"layer.0.mlp.nope"});
        FAIL();
    } catch (const pb::error& e) {
        EXPECT_EQ(e.code(), pb::errc::invalid_argument);
        EXPECT_NE(std::string(e.what()).find("layer.1.mlp.act"), std::string::npos);
    }
}

TEST(Forward, RejectsBadTokens) {
    const auto b = small_bundle();
    EXPECT_THROW(pb::forward(b, std::vector<pb::TokenId>{}), pb::error);
    EXPECT_THROW(pb::forward(b, std::vector<pb::TokenId>{999}), pb::error);
    EXPECT_THROW(pb::forward(b, std::vector<pb::TokenId>(17, 2)), pb::error);
}

TEST(Forward, CausalityUnderSuffixMutation) {
    const auto& b = fixture_model();
    pb::Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<pb::TokenId> ids(12);
        for (auto& id : ids) id = static_cast<pb::TokenId>(2 + rng.index(b.spec.vocab_size - 2));
        const auto base = pb::forward(b, ids).logits;
        const std::size_t t = rng.index(ids.size() - 1);
        auto mutated = ids;
        for (std::size_t p = t + 1; p < ids.size(); ++p)
            mutated[p] = static_cast<pb::TokenId>(2 + rng.index(b.spec.vocab_size - 2));
        const auto other = pb::forward(b, mutated).logits;
        for (std::size_t p = 0; p <= t; ++p)
            for (std::size_t v = 0; v < b.spec.vocab_size; ++v) ASSERT_EQ(base(p, v), other(p, v));
    }
}

TEST(Forward, CaptureSupersetNeverChangesLogits) {
    const auto& b = fixture_model();
    const std::vector<pb::TokenId> ids = {10, 20, 30, 40};
    const auto plain = pb::forward(b, ids).logits;
    std::set<std::string> all;
    for (const auto& s : pb::activation_sites(b.spec)) all.insert(s);
    const auto traced = pb::forward(b, ids, all);
    EXPECT_EQ(traced.logits, plain);
    EXPECT_EQ(traced.traces.size(), all.size());
}

TEST(LayerInputs, ShapesAndTraceIdentity) {
    const auto& b = fixture_model();
    const std::vector<pb::TokenId> ids = {10, 11, 12};
    const auto in = pb::layer_linear_inputs(b, ids);
    EXPECT_EQ(in.size(), pb::prunable_layers(b.spec).size());
    EXPECT_EQ(in.at("layer.0.mlp.fc1").cols(), b.spec.d_model);
    const auto tr = pb::forward(b, ids, {"layer.0.mlp.act", "layer.1.attn.ctx"});
    EXPECT_EQ(in.at("layer.0.mlp.fc2"), tr.traces.at("layer.0.mlp.act").values);
    EXPECT_EQ(in.at("layer.1.attn.o_proj"), tr.traces.at("layer.1.attn.ctx").values);
}

TEST(ApplyWeights, EmptyReplacementKeepsOutputs) {
    const auto& b = fixture_model();
    const std::vector<pb::TokenId> ids = {3, 4, 5};
    EXPECT_EQ(pb::forward(pb::apply_weights(b, {}), ids).logits, pb::forward(b, ids).logits);
}

TEST(ApplyWeights, SelfCopyIsBitIdentical) {
    const auto& b = fixture_model();
    const std::vector<pb::TokenId> ids = {3, 4, 5};
    const auto copy = pb::apply_weights(b, {{"layer.0.mlp.fc1.weight", b.tensor("layer.0.mlp.fc1.weight")}});
    EXPECT_EQ(pb::forward(copy, ids).logits, pb::forward(b, ids).logits);
    EXPECT_EQ(pb::bundle_fingerprint(copy), pb::bundle_fingerprint(b));
}

TEST(ApplyWeights, ZeroFc1StillFinite) {
    const auto& b = fixture_model();
    const auto z = pb::apply_weights(b, {{"layer.0.mlp.fc1.weight", pb::Matrix(256, 64)}});
    EXPECT_TRUE(pb::forward(z, std::vector<pb::TokenId>{3, 4, 5}).logits.all_finite());
}

TEST(ApplyWeights, RejectsUnknownOrMisshapen) {
    const auto b = small_bundle();
    try {
        pb::apply_weights(b, {{"nope.weight", pb::Matrix(1, 1)}});
        FAIL();
    } catch (const pb::error& e) {
        EXPECT_EQ(e.code(), pb::errc::unknown_tensor);
    }
    try {
        pb::apply_weights(b, {{"layer.0.mlp.fc1.weight", pb::Matrix(1, 1)}});
        FAIL();
    } catch (const pb::error& e) {
        EXPECT_EQ(e.code(), pb::errc::shape_mismatch);
    }
}

TEST(Sites, InputSiteMapping) {
    EXPECT_EQ(pb::input_site_of("layer.1.attn.q_proj"), "layer.1.attn.in");
    EXPECT_EQ(pb::input_site_of("layer.1.attn.o_proj"), "layer.1.attn.ctx");
    EXPECT_EQ(pb::input_site_of("layer.0.mlp.fc1"), "layer.0.mlp.in");
    EXPECT_EQ(pb::input_site_of("layer.0.mlp.fc2"), "layer.0.mlp.act");
}
