#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "digest.hpp"
#include "error.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace prunebench {

enum class TaskCategory { sentiment, qa, similarity, reasoning };

inline const std::vector<TaskCategory>& all_categories() {
    static const std::vector<TaskCategory> c = {TaskCategory::sentiment, TaskCategory::qa, TaskCategory::similarity,
                                                TaskCategory::reasoning};
    return c;
}

inline const char* to_string(TaskCategory c) {
    switch (c) {
        case TaskCategory::sentiment: return "sentiment";
        case TaskCategory::qa: return "qa";
        case TaskCategory::similarity: return "similarity";
        case TaskCategory::reasoning: return "reasoning";
    }
    return "?";
}

inline TaskCategory parse_category(const std::string& s) {
    for (auto c : all_categories())
        if (s == to_string(c)) return c;
    throw error(errc::invalid_argument, "unknown task category '" + s + "'");
}

struct TaskItem {
    std::string prompt;
    std::vector<std::string> choices;
    std::size_t answer_index = 0;
};

struct TaskFile {
    std::string task;
    TaskCategory category = TaskCategory::sentiment;
    std::vector<TaskItem> items;
    std::string content_sha256;
};

// JSON-lines: {"task", "category", "prompt", "choices", "answer_index"} per line;
// task and category must agree across lines.
inline TaskFile load_task_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    TaskFile tf;
    tf.content_sha256 = sha256_hex(bytes);
    std::string text(bytes.begin(), bytes.end());
    std::size_t lineno = 0, pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        TaskItem item;
        std::string task, category;
        try {
            auto j = nlohmann::json::parse(line);
            task = j.at("task").get<std::string>();
            category = j.at("category").get<std::string>();
            item.prompt = j.at("prompt").get<std::string>();
            item.choices = j.at("choices").get<std::vector<std::string>>();
            item.answer_index = j.at("answer_index").get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw error(errc::parse, where + ": malformed task item: " + e.what());
        }
        if (tf.items.empty()) {
            tf.task = task;
            tf.category = parse_category(category);
        } else if (task != tf.task || parse_category(category) != tf.category) {
            throw error(errc::invalid_argument, where + ": task/category differ from the first item");
        }
        if (item.choices.size() < 2) throw error(errc::invalid_argument, where + ": item needs at least 2 choices");
        if (item.answer_index >= item.choices.size()) {
            throw error(errc::invalid_argument, where + ": answer_index out of range");
        }
        tf.items.push_back(std::move(item));
    }
    if (tf.items.empty()) throw error(errc::invalid_argument, "task file '" + path + "' has no items");
    return tf;
}

// log softmax(row)[target], computed stably.
inline double log_prob(std::span<const double> logits, TokenId target) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    return logits[static_cast<std::size_t>(target)] - mx - std::log(z);
}

// Mean log-likelihood of the choice tokens following <bos> + prompt.
inline double score_choice(const ModelBundle& b, const std::string& prompt, const std::string& choice) {
    const auto& vocab = b.vocabulary();
    const auto p = vocab.tokenize(prompt);
    const auto c = vocab.tokenize(choice);
    if (c.size() == 0) throw error(errc::invalid_argument, "score_choice: choice '" + choice + "' has no tokens");
    std::vector<TokenId> ids;
    ids.push_back(Vocabulary::bos_id);
    ids.insert(ids.end(), p.ids.begin(), p.ids.end());
    ids.insert(ids.end(), c.ids.begin(), c.ids.end());
    if (ids.size() > b.spec.max_seq_len) {
        throw error(errc::invalid_argument, "score_choice: prompt+choice is " + std::to_string(ids.size()) +
                                                " tokens, over max_seq_len " + std::to_string(b.spec.max_seq_len));
    }
    const auto logits = forward(b, ids).logits;
    const std::size_t first = 1 + p.size();
    double sum = 0.0;
    for (std::size_t pos = first; pos < ids.size(); ++pos) sum += log_prob(logits.row(pos - 1), ids[pos]);
    return sum / static_cast<double>(c.size());
}

struct EvalResult {
    std::string task;
    TaskCategory category = TaskCategory::sentiment;
    double accuracy = 0.0;
    std::size_t n_items = 0;
    std::size_t n_correct = 0;
    std::vector<std::size_t> predictions;
    std::string model_fingerprint;
    std::string config_fingerprint;

    friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

inline EvalResult evaluate(const ModelBundle& b, const TaskFile& tf, std::size_t workers = 0,
                           std::string model_fingerprint = {}) {
    EvalResult res;
    res.task = tf.task;
    res.category = tf.category;
    res.n_items = tf.items.size();
    res.predictions.assign(tf.items.size(), 0);
    parallel_for(
        tf.items.size(),
        [&](std::size_t i) {
            const auto& item = tf.items[i];
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < item.choices.size(); ++c) {
                double s;
                try {
                    s = score_choice(b, item.prompt, item.choices[c]);
                } catch (const error& e) {
                    throw error(e.code(), tf.task + " item " + std::to_string(i) + ": " + e.what());
                }
                if (s > best) {
                    best = s;
                    res.predictions[i] = c;
                }
            }
        },
        workers);
    for (std::size_t i = 0; i < tf.items.size(); ++i) res.n_correct += res.predictions[i] == tf.items[i].answer_index;
    res.accuracy = static_cast<double>(res.n_correct) / static_cast<double>(res.n_items);
    res.model_fingerprint = model_fingerprint.empty() ? bundle_fingerprint(b) : std::move(model_fingerprint);
    res.config_fingerprint = sha256_hex(nlohmann::json({{"task_sha256", tf.content_sha256},
                                                        {"scoring", "mean_loglik_bos_prompt_choice"}})
                                            .dump());
    return res;
}

inline nlohmann::json to_json(const EvalResult& r) {
    return {{"task", r.task},
            {"category", to_string(r.category)},
            {"accuracy", r.accuracy},
            {"n_items", r.n_items},
            {"n_correct", r.n_correct},
            {"predictions", r.predictions},
            {"model_fingerprint", r.model_fingerprint},
            {"config_fingerprint", r.config_fingerprint}};
}

// Corpus texts -> token windows of at most max_len (consecutive chunks).
inline std::vector<std::vector<TokenId>> corpus_sequences(const Vocabulary& vocab, const std::vector<std::string>& texts,
                                                          std::size_t max_len) {
    std::vector<std::vector<TokenId>> out;
    for (const auto& t : texts) {
        const auto ids = vocab.tokenize(t).ids;
        for (std::size_t i = 0; i < ids.size(); i += max_len) {
            const std::size_t end = std::min(ids.size(), i + max_len);
            if (end - i >= 2) out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                                               ids.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    return out;
}

// exp(mean next-token negative log-likelihood) over all sequences.
inline double perplexity(const ModelBundle& b, const std::vector<std::vector<TokenId>>& corpus, std::size_t workers = 0) {
    if (corpus.empty()) throw error(errc::invalid_argument, "perplexity: empty corpus");
    std::vector<double> nll(corpus.size(), 0.0);
    std::vector<std::size_t> count(corpus.size(), 0);
    parallel_for(
        corpus.size(),
        [&](std::size_t s) {
            const auto& seq = corpus[s];
            if (seq.size() < 2) return;
            const auto logits = forward(b, seq).logits;
            for (std::size_t t = 1; t < seq.size(); ++t) nll[s] -= log_prob(logits.row(t - 1), seq[t]);
            count[s] = seq.size() - 1;
        },
        workers);
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        total += nll[s];
        n += count[s];
    }
    if (n == 0) throw error(errc::invalid_argument, "perplexity: corpus has no next-token predictions");
    return std::exp(total / static_cast<double>(n));
}

}  // namespace prunebench
