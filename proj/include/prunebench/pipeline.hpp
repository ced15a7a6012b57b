#pragma once

// End-to-end stages behind the command-line tool. Every stage writes into a
// run directory and records itself in <run>/manifest.json:
//
//   <run>/manifest.json  stats.bin  model.pbw  summary.json  masks/*.mask
//   <run>/eval/*.json    eval/results.csv
//   <run>/nsa/attribution.json  nsa/report.html  [nsa/lexicon.json]
//   <run>/sweep.csv  sweep_summary.json  sweep.html  cells/<id>/...
//
// Outputs are byte-reproducible from the manifest. Wall times are only
// recorded when StageContext::record_timings is set.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "calibration.hpp"
#include "digest.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "nsa.hpp"
#include "report.hpp"
#include "sparsifier.hpp"
#include "suggester.hpp"

namespace prunebench {

inline constexpr const char* tool_version = "0.1.0";

namespace fs = std::filesystem;

struct StageContext {
    std::string command_line;
    std::string config_file;
    bool record_timings = false;
    std::size_t workers = 0;
};

class StageRecorder {
public:
    StageRecorder(std::string stage, fs::path run_dir, const StageContext& ctx)
        : stage_(std::move(stage)), run_dir_(std::move(run_dir)), ctx_(ctx), start_(std::chrono::steady_clock::now()) {
        run_dir_ = run_dir_.lexically_normal();
        if (run_dir_.has_parent_path() && !run_dir_.has_filename()) run_dir_ = run_dir_.parent_path();
        fs::create_directories(run_dir_);
    }

    void input(const std::string& path) { inputs_[relabel(path)] = file_sha256(path); }

    // Paths under the run directory are recorded as "<out>/..." so manifests
    // do not depend on where the run was placed.
    std::string relabel(std::string s) const {
        for (const std::string& prefix : {run_dir_.string(), fs::absolute(run_dir_).lexically_normal().string()}) {
            if (prefix.empty()) continue;
            for (auto pos = s.find(prefix); pos != std::string::npos;) {
                const std::size_t end = pos + prefix.size();
                const bool starts = pos == 0 || s[pos - 1] == ' ' || s[pos - 1] == '=';
                const bool ends = end == s.size() || s[end] == '/' || s[end] == ' ';
                if (starts && ends) {
                    s.replace(pos, prefix.size(), "<out>");
                    pos = s.find(prefix, pos + 5);
                } else {
                    pos = s.find(prefix, pos + 1);
                }
            }
        }
        return s;
    }

    nlohmann::json relabel(const nlohmann::json& j) const {
        if (j.is_string()) return relabel(j.get<std::string>());
        if (j.is_array() || j.is_object()) {
            nlohmann::json out = j;
            for (auto& v : out) v = relabel(v);
            return out;
        }
        return j;
    }

    void output(const fs::path& path) { outputs_.insert(fs::relative(path, run_dir_).generic_string()); }

    void lap(const std::string& name) {
        const auto now = std::chrono::steady_clock::now();
        times_[name] = std::chrono::duration<double, std::milli>(now - lap_start_).count();
        lap_start_ = now;
    }

    void commit(const nlohmann::json& config, std::uint64_t seed) {
        const fs::path manifest_path = run_dir_ / "manifest.json";
        nlohmann::json manifest = {{"tool", "prunebench"}, {"stages", nlohmann::json::object()}};
        if (fs::exists(manifest_path)) {
            std::ifstream in(manifest_path);
            try {
                manifest = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception&) {
                throw error(errc::parse, manifest_path.string() + ": existing manifest is not valid JSON");
            }
        }
        nlohmann::json entry = {{"command", relabel(ctx_.command_line)},
                                {"config", relabel(config)},
                                {"inputs", inputs_},
                                {"seed", seed},
                                {"tool_version", tool_version},
                                {"outputs", outputs_}};
        if (!ctx_.config_file.empty()) {
            entry["config_file"] = ctx_.config_file;
            entry["config_file_sha256"] = file_sha256(ctx_.config_file);
        } else {
            entry["config_file"] = nullptr;
            entry["config_file_sha256"] = nullptr;
        }
        if (ctx_.record_timings) {
            times_["total"] =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
            entry["wall_times_ms"] = times_;
        }
        manifest["stages"][stage_] = entry;
        write_text(manifest_path, manifest.dump(2) + "\n");
    }

    static void write_text(const fs::path& path, const std::string& text) {
        fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw error(errc::io, "cannot write '" + path.string() + "'");
        out << text;
    }

private:
    std::string stage_;
    fs::path run_dir_;
    const StageContext& ctx_;
    std::chrono::steady_clock::time_point start_;
    std::chrono::steady_clock::time_point lap_start_ = start_;
    std::map<std::string, std::string> inputs_;
    std::set<std::string> outputs_;
    std::map<std::string, double> times_;
};

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
    std::string model;
    CalibConfig calib;
    std::string out_dir;
};

inline CalibStats calibrate(const ModelBundle& bundle, const std::string& model_fingerprint, const CalibConfig& cfg,
                            std::size_t workers = 0) {
    cfg.validate(bundle.spec);
    const auto lines = read_corpus(cfg.corpus_path);
    const auto samples = sample_calibration(lines, bundle.vocabulary(), cfg.n_samples, cfg.seq_len, cfg.seed);
    const auto fp = calibration_fingerprint(model_fingerprint, file_sha256(cfg.corpus_path), cfg.seq_len, cfg.seed,
                                            cfg.damping_fraction);
    return accumulate_stats(bundle, sample_tokens(samples), cfg.damping_fraction, fp, workers);
}

inline fs::path run_calibrate(const CalibrateArgs& a, const StageContext& ctx) {
    StageRecorder rec("calibrate", a.out_dir, ctx);
    rec.input(a.model);
    rec.input(a.calib.corpus_path);
    const auto bundle = load_bundle(a.model);
    auto stats = calibrate(bundle, bundle_fingerprint(bundle), a.calib, ctx.workers);
    rec.lap("accumulate");
    const fs::path out = fs::path(a.out_dir) / "stats.bin";
    save_stats(stats, out.string());
    rec.output(out);
    rec.commit({{"model", a.model},
                {"corpus", a.calib.corpus_path},
                {"n_samples", a.calib.n_samples},
                {"seq_len", a.calib.seq_len},
                {"seed", a.calib.seed},
                {"damping_fraction", a.calib.damping_fraction},
                {"token_count", stats.token_count}},
               a.calib.seed);
    return out;
}

// ---------------------------------------------------------------------------
// prune

struct PruneArgs {
    std::string model;
    std::string stats;
    MetricConfig metric;
    PruneOptions prune;
    std::string out_dir;
    bool dump_metrics = false;
};

inline nlohmann::json prune_config_json(const MetricConfig& m, const PruneOptions& p) {
    return {{"method", to_string(m.method)},
            {"pattern", pattern_to_json(p.pattern)},
            {"permute", p.permute},
            {"block_size", p.block_size},
            {"rank_group", p.group == RankGroup::per_row ? "per_row" : "per_layer"},
            {"ria_exponent", m.ria_exponent},
            {"sparsegpt_squared_denominator", m.sparsegpt_squared_denominator}};
}

inline std::string mask_file_name(const std::string& layer) { return layer + ".mask"; }

inline void write_prune_outputs(const PruneResult& res, const fs::path& dir, const nlohmann::json& config,
                                bool with_timings, StageRecorder* rec, bool save_model = true) {
    fs::create_directories(dir / "masks");
    if (save_model) {
        save_bundle(res.bundle, (dir / "model.pbw").string());
        if (rec) rec->output(dir / "model.pbw");
    }
    for (const auto& [layer, mask] : res.masks) {
        const auto p = dir / "masks" / mask_file_name(layer);
        save_mask(mask, p.string());
        if (rec) rec->output(p);
    }
    std::size_t numel = 0, pruned = 0;
    for (const auto& s : res.summary) {
        numel += s.numel;
        pruned += s.pruned;
    }
    nlohmann::json summary = {{"config", config},
                              {"total_numel", numel},
                              {"total_pruned", pruned},
                              {"overall_sparsity", numel ? static_cast<double>(pruned) / static_cast<double>(numel) : 0.0},
                              {"layers", summary_to_json(res.summary, with_timings)}};
    StageRecorder::write_text(dir / "summary.json", summary.dump(2) + "\n");
    if (rec) rec->output(dir / "summary.json");
}

inline fs::path run_prune(const PruneArgs& a, const StageContext& ctx) {
    StageRecorder rec("prune", a.out_dir, ctx);
    rec.input(a.model);
    rec.input(a.stats);
    const auto bundle = load_bundle(a.model);
    const auto stats = load_stats(a.stats);
    PruneOptions opt = a.prune;
    opt.workers = ctx.workers;
    auto res = prune_model(bundle, stats, a.metric, opt);
    rec.lap("prune");
    const auto config = prune_config_json(a.metric, opt);
    write_prune_outputs(res, a.out_dir, config, ctx.record_timings, &rec);
    if (a.dump_metrics) {
        std::map<std::string, Matrix> metrics;
        for (const auto& layer : prunable_layers(bundle.spec))
            metrics.emplace(layer + ".metric", compute_metric(bundle.tensor(weight_name(layer)), stats, layer, a.metric));
        const auto p = fs::path(a.out_dir) / "metrics.pbw";
        save_tensors(metrics, p.string());
        rec.output(p);
    }
    auto cfg = config;
    cfg["model"] = a.model;
    cfg["stats"] = a.stats;
    cfg["stats_fingerprint"] = stats.fingerprint;
    rec.commit(cfg, 0);
    return fs::path(a.out_dir) / "model.pbw";
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string model;
    std::vector<std::string> tasks;
    std::string perplexity_corpus;
    std::string out_dir;
};

inline std::vector<std::string> eval_csv_header() {
    return {"task", "category", "accuracy", "n_items", "n_correct", "model_fingerprint"};
}

inline fs::path run_eval(const EvalArgs& a, const StageContext& ctx) {
    StageRecorder rec("eval", a.out_dir, ctx);
    rec.input(a.model);
    const auto bundle = load_bundle(a.model);
    const auto model_fp = bundle_fingerprint(bundle);
    const fs::path dir = fs::path(a.out_dir) / "eval";
    std::string csv = csv_line(eval_csv_header());
    for (const auto& path : a.tasks) {
        rec.input(path);
        const auto tf = load_task_file(path);
        const auto res = evaluate(bundle, tf, ctx.workers, model_fp);
        const auto p = dir / (tf.task + ".json");
        StageRecorder::write_text(p, to_json(res).dump(2) + "\n");
        rec.output(p);
        csv += csv_line({res.task, to_string(res.category), fixed(res.accuracy, 6), std::to_string(res.n_items),
                         std::to_string(res.n_correct), res.model_fingerprint});
    }
    StageRecorder::write_text(dir / "results.csv", csv);
    rec.output(dir / "results.csv");
    if (!a.perplexity_corpus.empty()) {
        rec.input(a.perplexity_corpus);
        const auto seqs = corpus_sequences(bundle.vocabulary(), read_corpus(a.perplexity_corpus), bundle.spec.max_seq_len);
        const double ppl = perplexity(bundle, seqs, ctx.workers);
        nlohmann::json j = {{"corpus", a.perplexity_corpus}, {"perplexity", ppl}, {"model_fingerprint", model_fp}};
        StageRecorder::write_text(dir / "perplexity.json", j.dump(2) + "\n");
        rec.output(dir / "perplexity.json");
    }
    rec.lap("evaluate");
    rec.commit({{"model", a.model}, {"tasks", a.tasks}, {"perplexity_corpus", a.perplexity_corpus}}, 0);
    return dir;
}

// ---------------------------------------------------------------------------
// nsa

struct NsaArgs {
    std::string dense_model;
    std::string pruned_model;
    std::string lexicon;        // lexicon file, or
    std::string suggester_url;  // external suggester (materialized to nsa/lexicon.json)
    std::string task;           // task name for the suggester
    std::string samples;        // JSON-lines {"text"}
    NsaOptions options;
    std::string out_dir;
};

inline fs::path run_nsa_stage(const NsaArgs& a, const StageContext& ctx) {
    StageRecorder rec("nsa", a.out_dir, ctx);
    rec.input(a.dense_model);
    rec.input(a.pruned_model);
    rec.input(a.samples);
    const fs::path dir = fs::path(a.out_dir) / "nsa";
    fs::create_directories(dir);
    const auto dense = load_bundle(a.dense_model);
    const auto pruned = load_bundle(a.pruned_model);
    auto texts = read_corpus(a.samples);

    InfluentialLexicon lex;
    if (!a.lexicon.empty()) {
        rec.input(a.lexicon);
        lex = load_lexicon(a.lexicon);
    } else {
        auto head = texts;
        if (head.size() > a.options.max_samples) head.resize(a.options.max_samples);
        const auto words = suggest_words(a.suggester_url, a.task, head);
        lex = materialize_suggestions(a.task, words, (dir / "lexicon.json").string());
        rec.output(dir / "lexicon.json");
    }
    const auto report = run_nsa(dense, pruned, texts, lex, a.options);
    rec.lap("attribution");
    StageRecorder::write_text(dir / "attribution.json", to_json(report).dump(2) + "\n");
    rec.output(dir / "attribution.json");
    HeatmapOptions hopt;
    hopt.title = "Neuron attribution: " + lex.task + " @ " + a.options.site;
    hopt.significance_threshold = a.options.significance_threshold;
    StageRecorder::write_text(dir / "report.html", render_heatmap(report.records, hopt));
    rec.output(dir / "report.html");
    rec.commit({{"dense_model", a.dense_model},
                {"pruned_model", a.pruned_model},
                {"lexicon", a.lexicon},
                {"suggester_url", a.suggester_url},
                {"samples", a.samples},
                {"site", a.options.site},
                {"top_k", a.options.top_k},
                {"words_per_neuron", a.options.words_per_neuron},
                {"significance_threshold", a.options.significance_threshold},
                {"aggregation", a.options.signed_sum ? "signed" : "absolute"},
                {"max_samples", a.options.max_samples}},
               0);
    return dir;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepConfig {
    std::vector<std::string> models;
    std::vector<Method> methods;
    std::vector<Pattern> patterns;
    std::vector<std::string> corpora;
    std::vector<std::size_t> seq_lens;
    std::vector<std::string> tasks;
    std::string perplexity_corpus;
    std::size_t n_samples = 128;
    std::uint64_t seed = 0;
    double damping_fraction = 0.01;
    double ria_exponent = 0.5;
    bool sparsegpt_squared_denominator = true;
    bool permute = false;
    std::size_t block_size = 128;
    bool save_models = false;
};

// Relative paths inside the grid file resolve against its directory.
// Grid config JSON: {"models"|"model", "methods", "sparsities", "nm", "corpora",
// "seq_lens", "tasks", "perplexity_corpus", "n_samples", "seed", "damping",
// "ria_exponent", "permute", "block_size", "save_models"}.
inline SweepConfig load_sweep_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error(errc::io, "cannot open sweep config '" + path + "'");
    SweepConfig c;
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.contains("model")) c.models.push_back(j.at("model").get<std::string>());
        if (j.contains("models")) {
            for (const auto& m : j.at("models")) c.models.push_back(m.get<std::string>());
        }
        for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
        if (j.contains("sparsities"))
            for (const auto& s : j.at("sparsities")) c.patterns.push_back(Unstructured{s.get<double>()});
        if (j.contains("nm"))
            for (const auto& s : j.at("nm")) c.patterns.push_back(parse_nm(s.get<std::string>()));
        c.corpora = j.at("corpora").get<std::vector<std::string>>();
        c.seq_lens = j.value("seq_lens", std::vector<std::size_t>{128});
        c.tasks = j.value("tasks", std::vector<std::string>{});
        c.perplexity_corpus = j.value("perplexity_corpus", std::string{});
        c.n_samples = j.value("n_samples", c.n_samples);
        c.seed = j.value("seed", c.seed);
        c.damping_fraction = j.value("damping", c.damping_fraction);
        c.ria_exponent = j.value("ria_exponent", c.ria_exponent);
        c.sparsegpt_squared_denominator = j.value("sparsegpt_squared_denominator", c.sparsegpt_squared_denominator);
        c.permute = j.value("permute", c.permute);
        c.block_size = j.value("block_size", c.block_size);
        c.save_models = j.value("save_models", c.save_models);
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse, path + ": malformed sweep config: " + e.what());
    }
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    for (auto& m : c.models) resolve(m);
    for (auto& m : c.corpora) resolve(m);
    for (auto& m : c.tasks) resolve(m);
    resolve(c.perplexity_corpus);
    if (c.models.empty() || c.methods.empty() || c.patterns.empty() || c.corpora.empty() || c.seq_lens.empty()) {
        throw error(errc::invalid_argument, path + ": every sweep axis needs at least one value");
    }
    if (c.tasks.empty() && c.perplexity_corpus.empty()) {
        throw error(errc::invalid_argument, path + ": sweep needs tasks and/or a perplexity corpus");
    }
    return c;
}

struct SweepCell {
    std::string id;
    std::size_t model = 0;
    Method method = Method::wanda;
    Pattern pattern;
    std::size_t corpus = 0;
    std::size_t seq_len = 0;
};

struct SweepCellResult {
    double mean_sparsity = 0.0;
    std::optional<double> perplexity;
    std::map<TaskCategory, double> accuracy;
    std::map<std::string, PruneMask> masks;
};

struct SweepGrid {
    std::vector<SweepCell> cells;
    std::vector<SweepCellResult> results;
};

// Canonical nesting: model > method > pattern > corpus > seq_len.
inline std::vector<SweepCell> expand_grid(const SweepConfig& c) {
    std::vector<SweepCell> cells;
    for (std::size_t mo = 0; mo < c.models.size(); ++mo)
        for (auto me : c.methods)
            for (const auto& pa : c.patterns)
                for (std::size_t co = 0; co < c.corpora.size(); ++co)
                    for (auto sl : c.seq_lens) {
                        char id[16];
                        std::snprintf(id, sizeof id, "c%03zu", cells.size());
                        cells.push_back({id, mo, me, pa, co, sl});
                    }
    return cells;
}

inline double pattern_sparsity(const Pattern& p) {
    if (const auto* u = std::get_if<Unstructured>(&p)) return u->ratio;
    const auto& nm = std::get<NofM>(p);
    return 1.0 - static_cast<double>(nm.n) / static_cast<double>(nm.m);
}

inline std::vector<std::string> sweep_csv_header() {
    return {"cell",        "model",          "method",          "pattern",  "sparsity",      "calib_corpus", "seq_len",
            "mean_sparsity", "perplexity", "acc_sentiment", "acc_qa", "acc_similarity", "acc_reasoning"};
}

inline SweepGrid run_sweep(const std::string& config_path, const std::string& out_dir, const StageContext& ctx) {
    StageRecorder rec("sweep", out_dir, ctx);
    rec.input(config_path);
    const auto cfg = load_sweep_config(config_path);
    const fs::path root(out_dir);

    std::vector<ModelBundle> models;
    std::vector<std::string> model_fps;
    for (const auto& m : cfg.models) {
        rec.input(m);
        models.push_back(load_bundle(m));
        model_fps.push_back(bundle_fingerprint(models.back()));
    }
    std::vector<TaskFile> tasks;
    std::set<TaskCategory> seen;
    for (const auto& t : cfg.tasks) {
        rec.input(t);
        tasks.push_back(load_task_file(t));
        if (!seen.insert(tasks.back().category).second) {
            throw error(errc::invalid_argument, "sweep: two tasks share category '" +
                                                    std::string(to_string(tasks.back().category)) + "'");
        }
    }
    for (const auto& c : cfg.corpora) rec.input(c);
    if (!cfg.perplexity_corpus.empty()) rec.input(cfg.perplexity_corpus);

    SweepGrid grid;
    grid.cells = expand_grid(cfg);
    grid.results.resize(grid.cells.size());

    // Calibration is shared by every cell with the same (model, corpus, seq_len).
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, CalibStats> stats;
    for (const auto& cell : grid.cells) {
        const auto key = std::make_tuple(cell.model, cell.corpus, cell.seq_len);
        if (stats.count(key)) continue;
        CalibConfig cc{cfg.corpora[cell.corpus], cfg.n_samples, cell.seq_len, cfg.seed, cfg.damping_fraction};
        auto s = calibrate(models[cell.model], model_fps[cell.model], cc, ctx.workers);
        const auto p = root / "stats" /
                       ("m" + std::to_string(cell.model) + "_c" + std::to_string(cell.corpus) + "_s" +
                        std::to_string(cell.seq_len) + ".bin");
        fs::create_directories(p.parent_path());
        save_stats(s, p.string());
        rec.output(p);
        stats.emplace(key, std::move(s));
    }
    rec.lap("calibrate");

    std::vector<std::vector<std::vector<TokenId>>> ppl_corpus(models.size());
    if (!cfg.perplexity_corpus.empty()) {
        const auto texts = read_corpus(cfg.perplexity_corpus);
        for (std::size_t m = 0; m < models.size(); ++m)
            ppl_corpus[m] = corpus_sequences(models[m].vocabulary(), texts, models[m].spec.max_seq_len);
    }

    parallel_for(
        grid.cells.size(),
        [&](std::size_t i) {
            const auto& cell = grid.cells[i];
            MetricConfig mc{cell.method, cfg.ria_exponent, cfg.sparsegpt_squared_denominator};
            PruneOptions po{cell.pattern, cfg.permute, cfg.block_size, RankGroup::per_row, 1};
            auto res = prune_model(models[cell.model], stats.at({cell.model, cell.corpus, cell.seq_len}), mc, po);
            const fs::path dir = root / "cells" / cell.id;
            auto config = prune_config_json(mc, po);
            config["model"] = cfg.models[cell.model];
            config["calib_corpus"] = cfg.corpora[cell.corpus];
            config["seq_len"] = cell.seq_len;
            write_prune_outputs(res, dir, config, false, nullptr, cfg.save_models);
            auto& out = grid.results[i];
            std::size_t numel = 0, pruned = 0;
            for (const auto& s : res.summary) {
                numel += s.numel;
                pruned += s.pruned;
            }
            out.mean_sparsity = static_cast<double>(pruned) / static_cast<double>(numel);
            const auto fp = bundle_fingerprint(res.bundle);
            for (const auto& tf : tasks) {
                const auto er = evaluate(res.bundle, tf, 1, fp);
                out.accuracy[tf.category] = er.accuracy;
                StageRecorder::write_text(dir / "eval" / (tf.task + ".json"), to_json(er).dump(2) + "\n");
            }
            if (!cfg.perplexity_corpus.empty()) out.perplexity = perplexity(res.bundle, ppl_corpus[cell.model], 1);
            out.masks = std::move(res.masks);
        },
        ctx.workers);
    rec.lap("cells");

    std::vector<std::vector<std::string>> rows;
    std::string csv = csv_line(sweep_csv_header());
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        const auto& c = grid.cells[i];
        const auto& r = grid.results[i];
        std::vector<std::string> row = {c.id,
                                        cfg.models[c.model],
                                        to_string(c.method),
                                        pattern_string(c.pattern),
                                        fixed(pattern_sparsity(c.pattern), 4),
                                        cfg.corpora[c.corpus],
                                        std::to_string(c.seq_len),
                                        fixed(r.mean_sparsity, 6),
                                        r.perplexity ? fixed(*r.perplexity, 6) : ""};
        for (auto cat : all_categories()) {
            auto it = r.accuracy.find(cat);
            row.push_back(it == r.accuracy.end() ? "" : fixed(it->second, 6));
        }
        csv += csv_line(row);
        rows.push_back(std::move(row));
        rec.output(root / "cells" / c.id / "summary.json");
    }
    StageRecorder::write_text(root / "sweep.csv", csv);
    rec.output(root / "sweep.csv");

    // Spread of each metric across calibration corpora, holding the other axes fixed.
    auto spread = nlohmann::json::array();
    std::string spread_html = "<h2>Spread across calibration corpora</h2>\n<table>\n<tr><th>model</th><th>method</th>"
                              "<th>pattern</th><th>seq_len</th><th>metric</th><th>min</th><th>max</th><th>spread</th></tr>\n";
    std::map<std::tuple<std::size_t, std::string, std::string, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        const auto& c = grid.cells[i];
        groups[{c.model, to_string(c.method), pattern_string(c.pattern), c.seq_len}].push_back(i);
    }
    for (const auto& [key, idx] : groups) {
        std::vector<std::pair<std::string, std::vector<double>>> metrics;
        for (auto cat : all_categories()) {
            std::vector<double> v;
            for (auto i : idx)
                if (auto it = grid.results[i].accuracy.find(cat); it != grid.results[i].accuracy.end()) v.push_back(it->second);
            if (!v.empty()) metrics.emplace_back(std::string("acc_") + to_string(cat), v);
        }
        std::vector<double> ppl;
        for (auto i : idx)
            if (grid.results[i].perplexity) ppl.push_back(*grid.results[i].perplexity);
        if (!ppl.empty()) metrics.emplace_back("perplexity", ppl);
        for (const auto& [name, v] : metrics) {
            const double lo = *std::min_element(v.begin(), v.end());
            const double hi = *std::max_element(v.begin(), v.end());
            spread.push_back({{"model", cfg.models[std::get<0>(key)]},
                              {"method", std::get<1>(key)},
                              {"pattern", std::get<2>(key)},
                              {"seq_len", std::get<3>(key)},
                              {"metric", name},
                              {"min", lo},
                              {"max", hi},
                              {"spread", hi - lo},
                              {"n_corpora", v.size()}});
            spread_html += "<tr><td>" + html_escape(cfg.models[std::get<0>(key)]) + "</td><td>" + std::get<1>(key) +
                           "</td><td>" + std::get<2>(key) + "</td><td>" + std::to_string(std::get<3>(key)) +
                           "</td><td>" + name + "</td><td>" + fixed(lo, 4) + "</td><td>" + fixed(hi, 4) + "</td><td>" +
                           fixed(hi - lo, 4) + "</td></tr>\n";
        }
    }
    spread_html += "</table>\n<h2>All cells</h2>\n";
    StageRecorder::write_text(root / "sweep_summary.json",
                              nlohmann::json({{"cells", grid.cells.size()}, {"corpus_spread", spread}}).dump(2) + "\n");
    rec.output(root / "sweep_summary.json");
    StageRecorder::write_text(root / "sweep.html", render_table_html("Pruning sweep", sweep_csv_header(), rows, spread_html));
    rec.output(root / "sweep.html");

    std::vector<std::string> patterns;
    for (const auto& p : cfg.patterns) patterns.push_back(pattern_string(p));
    std::vector<std::string> methods;
    for (auto m : cfg.methods) methods.push_back(to_string(m));
    rec.commit({{"models", cfg.models},
                {"methods", methods},
                {"patterns", patterns},
                {"corpora", cfg.corpora},
                {"seq_lens", cfg.seq_lens},
                {"tasks", cfg.tasks},
                {"perplexity_corpus", cfg.perplexity_corpus},
                {"n_samples", cfg.n_samples},
                {"damping_fraction", cfg.damping_fraction},
                {"ria_exponent", cfg.ria_exponent},
                {"permute", cfg.permute},
                {"block_size", cfg.block_size},
                {"cells", grid.cells.size()}},
               cfg.seed);
    return grid;
}

}  // namespace prunebench
