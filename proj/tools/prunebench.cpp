// prunebench: calibrate, prune, evaluate and attribute small decoder models.
//
//   prunebench calibrate --model M --corpus C --out DIR [--n-samples N --seq-len L --seed S --damping D]
//   prunebench prune --method {wanda|sparsegpt|ria} (--sparsity R | --nm N:M [--permute]) --stats F --model M --out DIR
//   prunebench eval --model M --task T [--task T2 ...] [--perplexity-corpus C] --out DIR
//   prunebench nsa --dense M --pruned M2 --samples S (--lexicon L | --suggester URL --task-name T) --out DIR
//   prunebench sweep --grid G --out DIR
//
// Options may also come from a TOML/INI file given with --config; command-line
// flags win over the file, the file wins over built-in defaults.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "prunebench/pipeline.hpp"

namespace pb = prunebench;

namespace {

std::string quote_arg(const std::string& a) {
    if (!a.empty() && a.find_first_of(" \t\"'\\$") == std::string::npos) return a;
    std::string out = "'";
    for (char c : a) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

std::string join_args(int argc, char** argv) {
    std::string s = "prunebench";
    for (int i = 1; i < argc; ++i) s += " " + quote_arg(argv[i]);
    return s;
}

pb::log::level parse_level(const std::string& s) {
    if (s == "debug") return pb::log::level::debug;
    if (s == "info") return pb::log::level::info;
    if (s == "warn") return pb::log::level::warn;
    if (s == "error") return pb::log::level::error;
    return pb::log::level::quiet;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Post-training pruning and neuron attribution benchmark"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file with option values (flags override it)");
    app.set_version_flag("--version", std::string(pb::tool_version));

    pb::StageContext ctx;
    std::string log_level = "warn";
    std::size_t workers = 0;
    app.add_flag("--timings", ctx.record_timings, "Record wall times in the manifest and summaries");
    app.add_option("--workers", workers, "Worker threads (default: PRUNEBENCH_WORKERS or CPU count)");
    app.add_option("--log-level", log_level, "debug|info|warn|error|quiet")
        ->check(CLI::IsMember({"debug", "info", "warn", "error", "quiet"}));

    // calibrate
    pb::CalibrateArgs cal;
    auto* c_cal = app.add_subcommand("calibrate", "Accumulate activation statistics over a calibration corpus");
    c_cal->add_option("--model", cal.model, "Dense model (.pbw)")->required()->check(CLI::ExistingFile);
    c_cal->add_option("--corpus", cal.calib.corpus_path, "Calibration corpus (JSON lines with \"text\")")
        ->required()
        ->check(CLI::ExistingFile);
    c_cal->add_option("--n-samples", cal.calib.n_samples, "Number of sampled sequences")->capture_default_str();
    c_cal->add_option("--seq-len", cal.calib.seq_len, "Tokens per sampled sequence")->capture_default_str();
    c_cal->add_option("--seed", cal.calib.seed, "Sampling seed")->capture_default_str();
    c_cal->add_option("--damping", cal.calib.damping_fraction, "Damping as a fraction of the mean Hessian diagonal")
        ->capture_default_str();
    c_cal->add_option("--out", cal.out_dir, "Run directory")->required();

    // prune
    pb::PruneArgs pr;
    std::string method = "wanda", nm, group = "per_row";
    double sparsity = -1.0;
    auto* c_pr = app.add_subcommand("prune", "Prune every linear layer of a model");
    c_pr->add_option("--method", method, "Saliency metric")
        ->check(CLI::IsMember({"wanda", "sparsegpt", "ria"}))
        ->capture_default_str();
    auto* o_sp = c_pr->add_option("--sparsity", sparsity, "Unstructured sparsity ratio in [0, 1)");
    auto* o_nm = c_pr->add_option("--nm", nm, "N:M semi-structured pattern, e.g. 2:4");
    o_sp->excludes(o_nm);
    c_pr->add_flag("--permute", pr.prune.permute, "Search a channel permutation before N:M selection");
    c_pr->add_option("--stats", pr.stats, "Calibration statistics file")->required()->check(CLI::ExistingFile);
    c_pr->add_option("--model", pr.model, "Dense model (.pbw)")->required()->check(CLI::ExistingFile);
    c_pr->add_option("--out", pr.out_dir, "Run directory")->required();
    c_pr->add_option("--ria-exponent", pr.metric.ria_exponent, "Activation exponent a for RIA")->capture_default_str();
    c_pr->add_option("--block-size", pr.prune.block_size, "OBS column block size")->capture_default_str();
    c_pr->add_option("--rank-group", group, "Comparison group for unstructured ranking")
        ->check(CLI::IsMember({"per_row", "per_layer"}))
        ->capture_default_str();
    bool unsquared = false;
    c_pr->add_flag("--sparsegpt-unsquared", unsquared, "Use W^2/[H^-1]_jj instead of W^2/[H^-1]_jj^2");
    c_pr->add_flag("--dump-metrics", pr.dump_metrics, "Also write per-layer saliency tensors to metrics.pbw");

    // eval
    pb::EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "Zero-shot multiple-choice accuracy and perplexity");
    c_ev->add_option("--model", ev.model, "Model (.pbw)")->required()->check(CLI::ExistingFile);
    c_ev->add_option("--task", ev.tasks, "Task file (JSON lines); repeatable")->check(CLI::ExistingFile);
    c_ev->add_option("--perplexity-corpus", ev.perplexity_corpus, "Corpus for perplexity (JSON lines)")
        ->check(CLI::ExistingFile);
    c_ev->add_option("--out", ev.out_dir, "Run directory")->required();

    // nsa
    pb::NsaArgs ns;
    std::string aggregation = "absolute";
    auto* c_ns = app.add_subcommand("nsa", "Neuron attribution on dense vs pruned models");
    c_ns->add_option("--dense", ns.dense_model, "Dense model (.pbw)")->required()->check(CLI::ExistingFile);
    c_ns->add_option("--pruned", ns.pruned_model, "Pruned model (.pbw)")->required()->check(CLI::ExistingFile);
    c_ns->add_option("--samples", ns.samples, "Sample texts (JSON lines with \"text\")")
        ->required()
        ->check(CLI::ExistingFile);
    auto* o_lex = c_ns->add_option("--lexicon", ns.lexicon, "Influential-word lexicon (JSON)")->check(CLI::ExistingFile);
    auto* o_sug = c_ns->add_option("--suggester", ns.suggester_url, "HTTP endpoint that suggests influential words");
    o_lex->excludes(o_sug);
    c_ns->add_option("--task-name", ns.task, "Task name sent to the suggester")->needs(o_sug);
    c_ns->add_option("--site", ns.options.site, "Activation site")->capture_default_str();
    c_ns->add_option("--top-k", ns.options.top_k, "Neurons to report")->capture_default_str();
    c_ns->add_option("--words", ns.options.words_per_neuron, "Matched words per neuron")->capture_default_str();
    c_ns->add_option("--threshold", ns.options.significance_threshold, "Drop ratio counted as significant")
        ->capture_default_str();
    c_ns->add_option("--aggregation", aggregation, "absolute|signed")
        ->check(CLI::IsMember({"absolute", "signed"}))
        ->capture_default_str();
    c_ns->add_option("--max-samples", ns.options.max_samples, "Sample texts used")->capture_default_str();
    c_ns->add_option("--out", ns.out_dir, "Run directory")->required();

    // sweep
    std::string grid, sweep_out;
    auto* c_sw = app.add_subcommand("sweep", "Run a grid of prune+eval cells");
    c_sw->add_option("--grid", grid, "Sweep grid (JSON)")->required()->check(CLI::ExistingFile);
    c_sw->add_option("--out", sweep_out, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    pb::log::threshold() = parse_level(log_level);
    ctx.workers = workers;
    ctx.command_line = join_args(argc, argv);
    if (auto* cfg = app.get_config_ptr(); cfg && cfg->count() > 0) ctx.config_file = cfg->as<std::string>();

    try {
        if (*c_cal) {
            std::cout << pb::run_calibrate(cal, ctx).string() << '\n';
        } else if (*c_pr) {
            if (sparsity < 0.0 && nm.empty()) throw pb::error(pb::errc::invalid_argument, "prune: give --sparsity or --nm");
            if (!nm.empty()) pr.prune.pattern = pb::parse_nm(nm);
            else pr.prune.pattern = pb::Unstructured{sparsity};
            pr.metric.method = pb::parse_method(method);
            pr.metric.sparsegpt_squared_denominator = !unsquared;
            pr.prune.group = group == "per_layer" ? pb::RankGroup::per_layer : pb::RankGroup::per_row;
            std::cout << pb::run_prune(pr, ctx).string() << '\n';
        } else if (*c_ev) {
            if (ev.tasks.empty() && ev.perplexity_corpus.empty()) {
                throw pb::error(pb::errc::invalid_argument, "eval: give at least one --task or --perplexity-corpus");
            }
            std::cout << pb::run_eval(ev, ctx).string() << '\n';
        } else if (*c_ns) {
            if (ns.lexicon.empty() && ns.suggester_url.empty()) {
                throw pb::error(pb::errc::invalid_argument, "nsa: give --lexicon or --suggester");
            }
            ns.options.signed_sum = aggregation == "signed";
            std::cout << pb::run_nsa_stage(ns, ctx).string() << '\n';
        } else if (*c_sw) {
            const auto g = pb::run_sweep(grid, sweep_out, ctx);
            std::cout << (std::filesystem::path(sweep_out) / "sweep.csv").string() << " (" << g.cells.size()
                      << " cells)\n";
        }
    } catch (const pb::error& e) {
        std::cerr << "prunebench: " << pb::to_string(e.code()) << ": " << e.what() << '\n';
        return pb::exit_code(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "prunebench: io: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "prunebench: internal error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
