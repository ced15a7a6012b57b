#pragma once

// Static report emission: token heatmaps for attribution records and CSV/HTML
// tables for sweeps. Output is self-contained (inline CSS, no scripts, no
// external references) and uses locale-independent number formatting.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nsa.hpp"
#include "numfmt.hpp"

namespace prunebench {

inline std::string html_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += c;
        }
    }
    return out;
}

struct HeatmapOptions {
    std::string title = "Neuron activation heatmap";
    double significance_threshold = 0.5;
};

// Cell intensity is |A| / max|A| over every dense and pruned cell of the
// report, so 0 maps to no colour and the report maximum to full colour.
inline double heatmap_max_abs(const std::vector<AttributionRecord>& records) {
    double mx = 0.0;
    for (const auto& r : records)
        for (const auto& t : r.per_token) {
            for (double v : t.dense) mx = std::max(mx, std::abs(v));
            for (double v : t.pruned) mx = std::max(mx, std::abs(v));
        }
    return mx;
}

inline std::string render_heatmap(const std::vector<AttributionRecord>& records, const HeatmapOptions& opt = {}) {
    std::ostringstream h;
    h << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n<title>" << html_escape(opt.title)
      << "</title>\n<style>\n"
         "body{font-family:sans-serif;margin:1.5em;color:#222}\n"
         ".row{margin:0.15em 0;white-space:nowrap}\n"
         ".label{display:inline-block;width:4.5em;color:#666;font-size:0.85em}\n"
         ".tok{display:inline-block;padding:0.15em 0.3em;margin:0 0.1em;border-radius:3px;text-align:center}\n"
         ".tok small{display:block;font-size:0.7em;color:#333}\n"
         ".infl{outline:1px solid #333}\n"
         "table{border-collapse:collapse;margin:0.5em 0}\n"
         "td,th{border:1px solid #ccc;padding:0.2em 0.5em;text-align:right}\n"
         ".sig{font-weight:bold;color:#b2182b}\n"
         "</style>\n</head>\n<body>\n";
    h << "<h1>" << html_escape(opt.title) << "</h1>\n";
    if (records.empty()) {
        h << "<p class=\"notice\">No attribution records to display.</p>\n</body>\n</html>\n";
        return h.str();
    }
    const double mx = heatmap_max_abs(records);
    h << "<p class=\"meta\">Darker cells carry larger |activation|; full colour = " << fixed(mx, 4)
      << ". Significant drop threshold: " << fixed(opt.significance_threshold, 4) << ".</p>\n";

    auto cell = [&](const std::string& tok, double a, bool influential) {
        const double intensity = mx > 0.0 ? std::abs(a) / mx : 0.0;
        const std::string alpha = fixed(intensity, 4);
        h << "<span class=\"tok" << (influential ? " infl" : "") << "\" data-a=\"" << fixed(a, 4)
          << "\" data-intensity=\"" << alpha << "\" style=\"background-color:rgba(178,24,43," << alpha
          << ")\" title=\"" << fixed(a, 4) << "\">" << html_escape(tok) << "<small>" << fixed(a, 4)
          << "</small></span>";
    };

    for (const auto& r : records) {
        h << "<section class=\"record\" data-site=\"" << html_escape(r.site) << "\" data-neuron=\"" << r.neuron
          << "\">\n<h2>" << html_escape(r.site) << " neuron " << r.neuron << " (score " << fixed(r.score, 4)
          << ")</h2>\n";
        h << "<table class=\"words\">\n<tr><th>word</th><th>occurrences</th><th>dense mean |A|</th>"
             "<th>pruned mean |A|</th><th>drop ratio</th></tr>\n";
        for (const auto& w : r.matched_words) {
            h << "<tr" << (w.significant ? " class=\"sig\"" : "") << "><td>" << html_escape(w.word) << "</td><td>"
              << w.occurrences << "</td><td>" << fixed(w.dense_mean, 4) << "</td><td>"
              << (w.pruned_mean ? fixed(*w.pruned_mean, 4) : "n/a") << "</td><td>"
              << (w.drop_ratio ? fixed(*w.drop_ratio, 4) : "undefined") << "</td></tr>\n";
        }
        h << "</table>\n";
        for (std::size_t s = 0; s < r.per_token.size(); ++s) {
            const auto& t = r.per_token[s];
            h << "<div class=\"sample\" data-sample=\"" << s << "\">\n<div class=\"row dense\"><span class=\"label\">dense</span>";
            for (std::size_t i = 0; i < t.tokens.size(); ++i) cell(t.tokens[i], t.dense[i], t.influential[i]);
            h << "</div>\n<div class=\"row pruned\"><span class=\"label\">pruned</span>";
            for (std::size_t i = 0; i < t.tokens.size(); ++i)
                cell(t.tokens[i], i < t.pruned.size() ? t.pruned[i] : 0.0, t.influential[i]);
            h << "</div>\n</div>\n";
        }
        h << "</section>\n";
    }
    h << "</body>\n</html>\n";
    return h.str();
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string csv_line(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_field(fields[i]);
    }
    return out + "\n";
}

// Minimal HTML table over CSV-shaped rows.
inline std::string render_table_html(const std::string& title, const std::vector<std::string>& header,
                                     const std::vector<std::vector<std::string>>& rows, const std::string& preamble = {}) {
    std::ostringstream h;
    h << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n<title>" << html_escape(title)
      << "</title>\n<style>\nbody{font-family:sans-serif;margin:1.5em}\ntable{border-collapse:collapse}\n"
         "td,th{border:1px solid #ccc;padding:0.2em 0.5em;text-align:right}\n</style>\n</head>\n<body>\n<h1>"
      << html_escape(title) << "</h1>\n"
      << preamble << "<table>\n<tr>";
    for (const auto& c : header) h << "<th>" << html_escape(c) << "</th>";
    h << "</tr>\n";
    for (const auto& r : rows) {
        h << "<tr>";
        for (const auto& c : r) h << "<td>" << html_escape(c) << "</td>";
        h << "</tr>\n";
    }
    h << "</table>\n</body>\n</html>\n";
    return h.str();
}

}  // namespace prunebench
