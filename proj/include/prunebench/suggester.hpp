#pragma once

// Optional external influential-word suggester reached over HTTP.
//   POST <endpoint>  {"task": str, "samples": [str]}  ->  {"words": [str]}
// It is never called implicitly; its answer is always written to a lexicon
// file before use.

#include <regex>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "error.hpp"
#include "nsa.hpp"

namespace prunebench {

inline constexpr int suggester_timeout_seconds = 30;

inline std::vector<std::string> suggest_words(const std::string& endpoint, const std::string& task,
                                              const std::vector<std::string>& samples,
                                              int timeout_seconds = suggester_timeout_seconds) {
    if (endpoint.empty()) {
        throw error(errc::unavailable, "no word suggester endpoint configured; supply a lexicon file instead");
    }
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(endpoint, m, url_re)) {
        throw error(errc::invalid_argument, "suggester endpoint '" + endpoint + "' is not an http(s) URL");
    }
    const std::string base = m[1].str();
    const std::string path = m[2].matched ? m[2].str() : "/";

    httplib::Client client(base);
    client.set_connection_timeout(timeout_seconds, 0);
    client.set_read_timeout(timeout_seconds, 0);
    client.set_write_timeout(timeout_seconds, 0);
    const nlohmann::json body = {{"task", task}, {"samples", samples}};
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) {
        throw error(errc::network, "suggester at '" + endpoint + "' unreachable (" + httplib::to_string(res.error()) +
                                       "); fall back to a lexicon file");
    }
    if (res->status != 200) {
        throw error(errc::network, "suggester returned HTTP " + std::to_string(res->status) +
                                       "; fall back to a lexicon file");
    }
    try {
        return nlohmann::json::parse(res->body).at("words").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse, std::string("suggester response malformed: ") + e.what());
    }
}

// Deduplicates the suggestions and persists them as a lexicon file.
inline InfluentialLexicon materialize_suggestions(const std::string& task, const std::vector<std::string>& words,
                                                  const std::string& path) {
    auto lex = make_lexicon(task, words, LexiconProvenance::external_suggester, /*dedupe=*/true);
    save_lexicon(lex, path);
    return lex;
}

}  // namespace prunebench
