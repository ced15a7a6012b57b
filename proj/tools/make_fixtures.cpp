// Regenerates the shipped fixtures deterministically:
//
//   fixtures/tiny-2L.pbw            2 layers, d_model 64, 4 heads, d_ff 256
//   fixtures/vocab.txt              same vocabulary as embedded in the .pbw
//   fixtures/corpora/*.jsonl        wiki-like, review-like, qa-like
//   fixtures/tasks/*.jsonl          one multiple-choice task per category
//   fixtures/lexicons/sentiment.json
//   fixtures/nsa/sentiment_samples.jsonl
//   fixtures/sweep/*.json           sweep grids
//
// Weights are random except the last MLP output projection, which is a ridge
// least-squares fit that maps the residual stream toward the embedding of the
// next token on the union of the corpora. That gives the model real
// next-token structure, so pruning has a measurable effect.
//
// usage: make_fixtures [out_dir]

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "prunebench/eval.hpp"
#include "prunebench/model.hpp"
#include "prunebench/rng.hpp"

namespace pb = prunebench;
namespace fs = std::filesystem;
using Strings = std::vector<std::string>;

namespace {

constexpr std::uint64_t fixture_seed = 20240611;
constexpr std::size_t target_vocab = 2000;
constexpr double embed_std = 0.25;
constexpr double target_scale = 4.0;
constexpr double ridge_fraction = 1e-3;

template <typename T>
const T& pick(pb::Rng& rng, const std::vector<T>& v) {
    return v[rng.index(v.size())];
}

// ---------------------------------------------------------------------------
// Text generators

const Strings products = {"phone",   "lamp",   "chair",  "kettle", "blender", "jacket", "backpack", "speaker",
                          "charger", "camera", "watch",  "mixer",  "heater",  "fan",    "keyboard", "mouse",
                          "tent",    "mug",    "toaster", "pillow", "printer", "monitor", "drill",   "bottle"};

const Strings positive_phrases = {"works great",
                                  "arrived quickly and well packed",
                                  "is honestly the best purchase i made this year",
                                  "has excellent build quality",
                                  "does exactly what it promises",
                                  "feels solid and reliable",
                                  "was easy to set up",
                                  "looks beautiful on my desk",
                                  "is worth every penny",
                                  "exceeded my expectations",
                                  "made my mornings easier",
                                  "is quiet and efficient",
                                  "came from a seller i trust",
                                  "still works perfectly after months"};

const Strings negative_phrases = {"arrived badly damaged",
                                  "stopped working after a week",
                                  "is honestly a waste of money",
                                  "has poor build quality",
                                  "came from a seller i do not trust",
                                  "was damaged and missing parts",
                                  "is loud and unreliable",
                                  "broke badly on the first day",
                                  "feels cheap and flimsy",
                                  "never charged properly",
                                  "smelled like burnt plastic",
                                  "was returned for a refund",
                                  "failed to meet basic expectations",
                                  "cracked badly in the box"};

const Strings positive_closers = {"i would buy it again", "highly recommended", "five stars from me",
                                  "my family loves it", "great value overall"};
const Strings negative_closers = {"i would not buy it again", "avoid this one", "one star from me",
                                  "save your money", "very disappointing overall"};

struct Review {
    std::string body;
    bool positive;
};

Review make_review(pb::Rng& rng) {
    const bool pos = rng.uniform() < 0.5;
    const auto& phrases = pos ? positive_phrases : negative_phrases;
    const auto& closers = pos ? positive_closers : negative_closers;
    std::string body = "the " + pick(rng, products) + " " + pick(rng, phrases) + " .";
    if (rng.uniform() < 0.6) body += " " + pick(rng, closers) + " .";
    return {body, pos};
}

struct Fact {
    std::string question;
    std::string answer;
};

const std::vector<Fact> facts = {
    {"what do bees make", "honey"},
    {"what do cows drink", "water"},
    {"what gas do plants take in", "carbon"},
    {"what do plants need to grow", "sunlight"},
    {"what is frozen water called", "ice"},
    {"what color is a clear daytime sky", "blue"},
    {"what force pulls objects toward the earth", "gravity"},
    {"which organ pumps blood", "heart"},
    {"which organ helps us breathe", "lungs"},
    {"what do we call baby cats", "kittens"},
    {"what do we call baby dogs", "puppies"},
    {"what planet do we live on", "earth"},
    {"what gives light during the day", "sun"},
    {"what shines at night in the sky", "moon"},
    {"what do fish use to breathe", "gills"},
    {"what do birds use to fly", "wings"},
    {"what tool measures temperature", "thermometer"},
    {"what tool measures length", "ruler"},
    {"what do caterpillars become", "butterflies"},
    {"what is melted rock called", "lava"},
    {"what falls from clouds when it rains", "rain"},
    {"what do magnets attract", "iron"},
    {"what season comes after winter", "spring"},
    {"what season comes after summer", "autumn"},
    {"what do roots absorb from soil", "water"},
    {"what shape is a ball", "round"},
    {"what do teeth help us do", "chew"},
    {"what sense do ears provide", "hearing"},
    {"what sense do eyes provide", "sight"},
    {"what do seeds grow into", "plants"},
    {"what covers most of the earth", "oceans"},
    {"what do we breathe in to live", "oxygen"},
    {"what animal is known for stripes", "zebra"},
    {"what animal has a very long neck", "giraffe"},
    {"what gem is very hard", "diamond"},
    {"what metal is used in wires", "copper"},
};

struct CauseEffect {
    std::string premise;
    std::string cause;
    std::string effect;
};

const std::vector<CauseEffect> cause_effects = {
    {"the glass fell off the table", "the cat pushed it", "it broke into pieces"},
    {"the ground was wet", "it rained last night", "the children made mud pies"},
    {"the man was tired", "he worked all night", "he went to sleep early"},
    {"the ice cream melted", "it was left in the sun", "the floor became sticky"},
    {"the girl laughed", "her friend told a joke", "her brother laughed too"},
    {"the car stopped", "it ran out of fuel", "the driver called for help"},
    {"the lights went out", "the storm cut the power", "the family lit candles"},
    {"the plant died", "nobody watered it", "the pot was thrown away"},
    {"the student passed the exam", "she studied every day", "her parents were proud"},
    {"the river flooded", "the snow melted quickly", "the roads were closed"},
    {"the baby cried", "he was hungry", "his mother fed him"},
    {"the dog barked", "a stranger came to the door", "the neighbors woke up"},
    {"the phone died", "the battery was empty", "she could not call home"},
    {"the bread burned", "the oven was too hot", "the kitchen filled with smoke"},
    {"the team won the game", "they practiced hard", "the fans cheered loudly"},
    {"the window shattered", "a ball hit it", "cold air came inside"},
    {"the road was icy", "the temperature dropped", "the bus drove slowly"},
    {"the shop closed early", "the owner was sick", "customers went elsewhere"},
};

struct Paraphrase {
    std::string a;
    std::string b;
};

const std::vector<Paraphrase> paraphrases = {
    {"the cat sat on the mat", "the cat rested on the mat"},
    {"the company reported higher profits", "the firm announced bigger earnings"},
    {"the meeting was moved to friday", "the meeting was rescheduled for friday"},
    {"he bought a new car", "he purchased a new vehicle"},
    {"the weather is very cold today", "it is freezing outside today"},
    {"she finished the report quickly", "she completed the report fast"},
    {"the train arrived late", "the train came in behind schedule"},
    {"the children played in the park", "the kids played at the park"},
    {"the price of bread went up", "bread became more expensive"},
    {"the museum opens at nine", "the museum begins opening at nine"},
    {"the doctor examined the patient", "the patient was checked by the doctor"},
    {"the road was closed for repairs", "the street was shut for maintenance"},
    {"the movie was very long", "the film lasted a long time"},
    {"the team lost the final match", "the team was beaten in the final"},
    {"the river runs through the city", "the city is crossed by the river"},
    {"the store sells fresh fruit", "fresh fruit is sold at the store"},
};

const Strings wiki_kinds = {"city", "town", "village", "river", "mountain", "lake", "island", "valley"};
const Strings wiki_sizes = {"small", "large", "historic", "quiet", "busy", "remote", "famous", "old"};
const Strings wiki_dirs = {"north", "south", "east", "west", "center"};
const Strings wiki_known = {"its markets",   "its bridges",  "its wine",   "its festivals", "its fishing",
                            "its castles",   "its forests",  "its trade",  "its music",     "its gardens",
                            "its libraries", "its railway",  "its harbor", "its temples",   "its mines"};
const Strings wiki_verbs = {"was founded", "was first mentioned", "grew rapidly", "was rebuilt", "became a trade center"};
const Strings wiki_centuries = {"first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth",
                                "ninth", "tenth", "eleventh", "twelfth"};
const Strings wiki_extra = {"the population is about one thousand people",
                            "the climate is mild and wet",
                            "the local language is still spoken",
                            "many visitors arrive in summer",
                            "the main road connects it to the coast",
                            "a university was opened there",
                            "farming remains the main activity",
                            "the old walls still stand"};

Strings pseudo_words(pb::Rng& rng, std::size_t n, const std::set<std::string>& taken) {
    static const Strings onset = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                  "br", "dr", "gr", "kr", "st", "tr", "sh", "th"};
    static const Strings vowel = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};
    static const Strings coda = {"", "n", "r", "l", "s", "m", "th", "nd"};
    Strings out;
    std::set<std::string> seen = taken;
    while (out.size() < n) {
        const std::size_t syllables = 2 + rng.index(2);
        std::string w;
        for (std::size_t s = 0; s < syllables; ++s) w += pick(rng, onset) + pick(rng, vowel);
        w += pick(rng, coda);
        if (seen.insert(w).second) out.push_back(w);
    }
    return out;
}

std::string wiki_line(pb::Rng& rng, const Strings& names) {
    const auto& name = pick(rng, names);
    std::string s = name + " is a " + pick(rng, wiki_sizes) + " " + pick(rng, wiki_kinds) + " in the " +
                    pick(rng, wiki_dirs) + " of " + pick(rng, names) + " . it is known for " + pick(rng, wiki_known) +
                    " .";
    if (rng.uniform() < 0.7) {
        s += " it " + pick(rng, wiki_verbs) + " in the " + pick(rng, wiki_centuries) + " century .";
    }
    if (rng.uniform() < 0.5) s += " " + pick(rng, wiki_extra) + " .";
    return s;
}

std::string review_prompt(const std::string& body) { return "review : " + body + " sentiment :"; }
std::string qa_prompt(const Fact& f) { return "question : " + f.question + " ? answer :"; }
std::string similarity_prompt(const std::string& a, const std::string& b) {
    return "sentence one : " + a + " . sentence two : " + b + " . same meaning :";
}
std::string reasoning_prompt(const CauseEffect& c, bool ask_cause) {
    return "premise : " + c.premise + " . " + (ask_cause ? "what was the cause ?" : "what happened as a result ?") +
           " answer :";
}

struct Fixtures {
    Strings wiki, review, qa;
    std::vector<nlohmann::json> sentiment, science, paraphrase, cause;
    Strings nsa_samples;
};

Fixtures make_texts(pb::Rng& rng, const Strings& names) {
    Fixtures f;
    for (int i = 0; i < 300; ++i) f.wiki.push_back(wiki_line(rng, names));
    for (int i = 0; i < 60; ++i) {
        const std::size_t a = rng.index(paraphrases.size());
        const std::size_t b = rng.uniform() < 0.5 ? a : rng.index(paraphrases.size());
        f.wiki.push_back(similarity_prompt(paraphrases[a].a, paraphrases[b].b) + (a == b ? " yes ." : " no ."));
    }
    for (int i = 0; i < 360; ++i) {
        const auto r = make_review(rng);
        f.review.push_back(review_prompt(r.body) + (r.positive ? " positive ." : " negative ."));
    }
    for (int i = 0; i < 240; ++i) {
        const auto& fact = pick(rng, facts);
        f.qa.push_back(qa_prompt(fact) + " " + fact.answer + " .");
    }
    for (int i = 0; i < 120; ++i) {
        const auto& c = pick(rng, cause_effects);
        const bool ask_cause = rng.uniform() < 0.5;
        f.qa.push_back(reasoning_prompt(c, ask_cause) + " " + (ask_cause ? c.cause : c.effect) + " .");
    }

    auto item = [](const std::string& task, const std::string& cat, const std::string& prompt, const Strings& choices,
                   std::size_t answer) {
        return nlohmann::json{{"task", task}, {"category", cat}, {"prompt", prompt}, {"choices", choices},
                              {"answer_index", answer}};
    };
    for (int i = 0; i < 120; ++i) {
        const auto r = make_review(rng);
        f.sentiment.push_back(item("review-polarity", "sentiment", review_prompt(r.body), {"positive", "negative"},
                                   r.positive ? 0 : 1));
    }
    for (int i = 0; i < 120; ++i) {
        const auto& fact = pick(rng, facts);
        std::set<std::string> opts = {fact.answer};
        while (opts.size() < 4) opts.insert(pick(rng, facts).answer);
        Strings choices(opts.begin(), opts.end());
        for (std::size_t k = choices.size(); k > 1; --k) std::swap(choices[k - 1], choices[rng.index(k)]);
        const auto answer = static_cast<std::size_t>(std::find(choices.begin(), choices.end(), fact.answer) - choices.begin());
        f.science.push_back(item("science-qa", "qa", qa_prompt(fact), choices, answer));
    }
    for (int i = 0; i < 120; ++i) {
        const std::size_t a = rng.index(paraphrases.size());
        const bool same = rng.uniform() < 0.5;
        std::size_t b = a;
        while (!same && b == a) b = rng.index(paraphrases.size());
        const std::string second = same ? paraphrases[a].b : paraphrases[b].b;
        f.paraphrase.push_back(
            item("paraphrase", "similarity", similarity_prompt(paraphrases[a].a, second), {"yes", "no"}, same ? 0 : 1));
    }
    for (int i = 0; i < 120; ++i) {
        const std::size_t a = rng.index(cause_effects.size());
        std::size_t b = a;
        while (b == a) b = rng.index(cause_effects.size());
        const bool ask_cause = rng.uniform() < 0.5;
        const auto& right = ask_cause ? cause_effects[a].cause : cause_effects[a].effect;
        const auto& wrong = ask_cause ? cause_effects[b].cause : cause_effects[b].effect;
        const bool first = rng.uniform() < 0.5;
        f.cause.push_back(item("cause-effect", "reasoning", reasoning_prompt(cause_effects[a], ask_cause),
                               first ? Strings{right, wrong} : Strings{wrong, right}, first ? 0 : 1));
    }

    // Attribution samples: reviews that contain the lexicon words.
    f.nsa_samples = {
        "the phone arrived badly damaged and i do not trust this seller .",
        "honestly the kettle works great and i trust the brand .",
        "the lamp was damaged in transit . honestly very disappointing overall .",
        "i trust this seller . the chair arrived quickly and well packed .",
        "the speaker broke badly on the first day . save your money .",
        "honestly the best purchase i made this year . highly recommended .",
        "the camera came from a seller i do not trust and arrived badly damaged .",
        "the jacket feels solid and reliable . i honestly love it .",
        "the printer cracked badly in the box and the charger was damaged .",
        "great value overall . i trust it and would buy it again .",
    };
    return f;
}

// ---------------------------------------------------------------------------
// Output helpers

void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw pb::error(pb::errc::io, "cannot write " + p.string());
    out << s;
}

void write_jsonl_texts(const fs::path& p, const Strings& lines) {
    std::string s;
    for (const auto& l : lines) s += nlohmann::json{{"text", l}}.dump() + "\n";
    write_text(p, s);
}

void write_jsonl(const fs::path& p, const std::vector<nlohmann::json>& lines) {
    std::string s;
    for (const auto& l : lines) s += l.dump() + "\n";
    write_text(p, s);
}

void collect_words(const std::string& text, std::set<std::string>& out) {
    const pb::Vocabulary probe({"<unk>", "<bos>"});
    for (const auto& w : probe.tokenize(text).words) out.insert(w);
}

// ---------------------------------------------------------------------------
// Least-squares fit of the last MLP output projection

pb::ModelBundle fit_last_fc2(const pb::ModelBundle& base, const Strings& texts, double ridge, double target_scale) {
    const auto& spec = base.spec;
    const std::size_t last = spec.n_layers - 1;
    const std::string pre = "layer." + std::to_string(last) + ".";
    const auto& tok = base.tensor("tok_embed.weight");
    const auto& pos = base.tensor("pos_embed.weight");

    pb::Matrix ata(spec.d_ff, spec.d_ff);
    pb::Matrix atb(spec.d_ff, spec.d_model);
    for (const auto& text : texts) {
        auto ids = base.vocabulary().tokenize(text, spec.max_seq_len).ids;
        if (ids.size() < 2) continue;
        // Residual stream before the last MLP output is the embedding plus every
        // sublayer output except that one.
        pb::Matrix resid(ids.size(), spec.d_model);
        for (std::size_t t = 0; t < ids.size(); ++t)
            for (std::size_t j = 0; j < spec.d_model; ++j)
                resid(t, j) = tok(static_cast<std::size_t>(ids[t]), j) + pos(t, j);
        pb::Matrix act;
        pb::detail::run(base, ids, [&](const std::string& site, const pb::Matrix& v) {
            const bool sublayer_out = site.ends_with(".attn.out") || site.ends_with(".mlp.out");
            if (sublayer_out && site != pre + "mlp.out") pb::detail::add_in_place(resid, v);
            if (site == pre + "mlp.act") act = v;
        });
        for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
            auto a = act.row(t);
            auto target = tok.row(static_cast<std::size_t>(ids[t + 1]));
            for (std::size_t i = 0; i < spec.d_ff; ++i) {
                for (std::size_t j = i; j < spec.d_ff; ++j) ata(i, j) += a[i] * a[j];
                for (std::size_t j = 0; j < spec.d_model; ++j) atb(i, j) += a[i] * (target_scale * target[j] - resid(t, j));
            }
        }
    }
    double mean_diag = 0.0;
    for (std::size_t i = 0; i < spec.d_ff; ++i) mean_diag += ata(i, i);
    mean_diag /= static_cast<double>(spec.d_ff);
    for (std::size_t i = 0; i < spec.d_ff; ++i) {
        for (std::size_t j = 0; j < i; ++j) ata(i, j) = ata(j, i);
        ata(i, i) += ridge * mean_diag;
    }
    const pb::Matrix x = pb::matmul(pb::spd_inverse(ata), atb);  // d_ff x d_model
    return pb::apply_weights(base, {{pre + "mlp.fc2.weight", x.transposed()}});
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("fixtures");
    try {
        pb::Rng rng = pb::Rng::substream(fixture_seed, "texts");
        pb::Rng name_rng = pb::Rng::substream(fixture_seed, "names");
        const Strings names = pseudo_words(name_rng, 40, {});
        const auto fx = make_texts(rng, names);

        std::set<std::string> words;
        for (const auto* set : {&fx.wiki, &fx.review, &fx.qa, &fx.nsa_samples})
            for (const auto& t : *set) collect_words(t, words);
        for (const auto* set : {&fx.sentiment, &fx.science, &fx.paraphrase, &fx.cause})
            for (const auto& j : *set) {
                collect_words(j.at("prompt").get<std::string>(), words);
                for (const auto& c : j.at("choices")) collect_words(c.get<std::string>(), words);
            }

        Strings tokens = {"<unk>", "<bos>"};
        tokens.insert(tokens.end(), words.begin(), words.end());
        pb::Rng pad_rng = pb::Rng::substream(fixture_seed, "pad");
        const auto pad = pseudo_words(pad_rng, target_vocab - tokens.size(), words);
        tokens.insert(tokens.end(), pad.begin(), pad.end());
        auto vocab = std::make_shared<const pb::Vocabulary>(tokens);

        const pb::ModelSpec spec{2, 64, 4, 256, vocab->size(), 128};
        auto base = pb::random_bundle(spec, vocab, fixture_seed, embed_std);

        Strings train = fx.wiki;
        train.insert(train.end(), fx.review.begin(), fx.review.end());
        train.insert(train.end(), fx.qa.begin(), fx.qa.end());
        const auto model = fit_last_fc2(base, train, ridge_fraction, target_scale);

        fs::create_directories(root);
        pb::save_bundle(model, (root / "tiny-2L.pbw").string());
        pb::save_vocabulary(*vocab, (root / "vocab.txt").string());
        write_jsonl_texts(root / "corpora" / "wiki-like.jsonl", fx.wiki);
        write_jsonl_texts(root / "corpora" / "review-like.jsonl", fx.review);
        write_jsonl_texts(root / "corpora" / "qa-like.jsonl", fx.qa);
        write_jsonl(root / "tasks" / "sentiment.jsonl", fx.sentiment);
        write_jsonl(root / "tasks" / "qa.jsonl", fx.science);
        write_jsonl(root / "tasks" / "similarity.jsonl", fx.paraphrase);
        write_jsonl(root / "tasks" / "reasoning.jsonl", fx.cause);
        write_jsonl_texts(root / "nsa" / "sentiment_samples.jsonl", fx.nsa_samples);
        write_text(root / "lexicons" / "sentiment.json",
                   nlohmann::json{{"task", "sentiment"}, {"words", {"badly", "damaged", "trust", "honestly"}}}.dump(2) +
                       "\n");

        const Strings tasks = {"../tasks/sentiment.jsonl", "../tasks/qa.jsonl",
                               "../tasks/similarity.jsonl", "../tasks/reasoning.jsonl"};
        const nlohmann::json calib_grid = {
            {"model", "../tiny-2L.pbw"},
            {"methods", {"wanda", "sparsegpt", "ria"}},
            {"sparsities", {0.5}},
            {"corpora",
             {"../corpora/wiki-like.jsonl", "../corpora/review-like.jsonl", "../corpora/qa-like.jsonl"}},
            {"seq_lens", {64}},
            {"n_samples", 32},
            {"seed", 0},
            {"tasks", tasks},
            {"perplexity_corpus", "../corpora/wiki-like.jsonl"}};
        write_text(root / "sweep" / "calibration.json", calib_grid.dump(2) + "\n");
        const nlohmann::json sparsity_grid = {{"model", "../tiny-2L.pbw"},
                                              {"methods", {"wanda"}},
                                              {"sparsities", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}},
                                              {"corpora", {"../corpora/wiki-like.jsonl"}},
                                              {"seq_lens", {64}},
                                              {"n_samples", 32},
                                              {"seed", 0},
                                              {"perplexity_corpus", "../corpora/wiki-like.jsonl"}};
        write_text(root / "sweep" / "sparsity.json", sparsity_grid.dump(2) + "\n");

        std::cout << "vocab " << vocab->size() << " (" << words.size() << " corpus words)\n";
        const auto seqs = pb::corpus_sequences(*vocab, fx.wiki, spec.max_seq_len);
        std::cout << "wiki perplexity: random " << pb::perplexity(base, seqs, 1) << ", fitted "
                  << pb::perplexity(model, seqs, 1) << '\n';
    } catch (const std::exception& e) {
        std::cerr << "make_fixtures: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
