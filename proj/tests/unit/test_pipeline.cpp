#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "prunebench/pipeline.hpp"
#include "support.hpp"

namespace pb = prunebench;
namespace fs = std::filesystem;
using namespace testing_support;

namespace {

std::string quoted(const std::string& s) { return "'" + s + "'"; }

// Runs the CLI with `args`; returns the exit status.
int run_cli(const std::string& args, const std::string& log = "/dev/null") {
    const std::string cmd = quoted(cli_path()) + " " + args + " >" + quoted(log) + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const std::string& path) { return nlohmann::json::parse(slurp(path)); }

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::string calibrate_args(const std::string& out, const std::string& extra = "") {
    return "calibrate --model " + quoted(fixture("tiny-2L.pbw")) + " --corpus " +
           quoted(fixture("corpora/wiki-like.jsonl")) + " --n-samples 16 --seq-len 32 --out " + quoted(out) + " " + extra;
}

}  // namespace

TEST(Cli, VersionAndUsage) {
    TempDir dir("cli");
    EXPECT_EQ(run_cli("--version", dir / "v.txt"), 0);
    EXPECT_NE(slurp(dir / "v.txt").find(pb::tool_version), std::string::npos);
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
}

TEST(Cli, FullPipelineProducesArtifacts) {
    TempDir dir("full");
    const std::string out = dir / "run";
    ASSERT_EQ(run_cli(calibrate_args(out)), 0);
    ASSERT_EQ(run_cli("prune --method wanda --sparsity 0.5 --stats " + quoted(out + "/stats.bin") + " --model " +
                      quoted(fixture("tiny-2L.pbw")) + " --out " + quoted(out)),
              0);
    ASSERT_EQ(run_cli("eval --model " + quoted(out + "/model.pbw") + " --task " + quoted(fixture("tasks/sentiment.jsonl")) +
                      " --perplexity-corpus " + quoted(fixture("corpora/wiki-like.jsonl")) + " --out " + quoted(out)),
              0);
    ASSERT_EQ(run_cli("nsa --dense " + quoted(fixture("tiny-2L.pbw")) + " --pruned " + quoted(out + "/model.pbw") +
                      " --samples " + quoted(fixture("nsa/sentiment_samples.jsonl")) + " --lexicon " +
                      quoted(fixture("lexicons/sentiment.json")) + " --out " + quoted(out)),
              0);
    for (const char* f : {"manifest.json", "stats.bin", "model.pbw", "summary.json", "masks/layer.0.attn.q_proj.mask",
                          "eval/review-polarity.json", "eval/results.csv", "eval/perplexity.json", "nsa/attribution.json",
                          "nsa/report.html"})
        EXPECT_TRUE(fs::exists(out + "/" + f)) << f;
    EXPECT_EQ(std::distance(fs::directory_iterator(out + "/masks"), fs::directory_iterator{}), 12);

    const auto manifest = read_json(out + "/manifest.json");
    for (const char* stage : {"calibrate", "prune", "eval", "nsa"}) {
        ASSERT_TRUE(manifest["stages"].contains(stage)) << stage;
        const auto& s = manifest["stages"][stage];
        EXPECT_EQ(s["tool_version"], pb::tool_version);
        EXPECT_FALSE(s.contains("wall_times_ms"));
        EXPECT_TRUE(s["command"].get<std::string>().rfind("prunebench " + std::string(stage), 0) == 0);
        EXPECT_FALSE(s["inputs"].empty());
    }
    EXPECT_EQ(manifest["stages"]["calibrate"]["config"]["n_samples"], 16);
    const auto summary = read_json(out + "/summary.json");
    const auto model = pb::load_bundle(out + "/model.pbw");
    for (const auto& layer : pb::prunable_layers(model.spec)) {
        const auto mask = pb::load_mask(out + "/masks/" + layer + ".mask");
        const auto& w = model.tensor(pb::weight_name(layer));
        for (std::size_t i = 0; i < w.size(); ++i)
            if (!mask.keep[i]) EXPECT_EQ(w.values()[i], 0.0);
    }
    EXPECT_FALSE(summary.dump().empty());
}

TEST(Cli, SparsityZeroMatchesDenseEval) {
    TempDir dir("zero");
    const std::string out = dir / "run";
    ASSERT_EQ(run_cli(calibrate_args(out)), 0);
    ASSERT_EQ(run_cli("prune --method sparsegpt --sparsity 0 --stats " + quoted(out + "/stats.bin") + " --model " +
                      quoted(fixture("tiny-2L.pbw")) + " --out " + quoted(out)),
              0);
    const std::string task = " --task " + quoted(fixture("tasks/reasoning.jsonl"));
    ASSERT_EQ(run_cli("eval --model " + quoted(out + "/model.pbw") + task + " --out " + quoted(out + "/pruned")), 0);
    ASSERT_EQ(run_cli("eval --model " + quoted(fixture("tiny-2L.pbw")) + task + " --out " + quoted(out + "/dense")), 0);
    const auto a = read_json(out + "/pruned/eval/cause-effect.json");
    const auto b = read_json(out + "/dense/eval/cause-effect.json");
    EXPECT_EQ(a["accuracy"], b["accuracy"]);
    EXPECT_EQ(a["predictions"], b["predictions"]);
}

TEST(Cli, ExitCodesPerErrorClass) {
    TempDir dir("codes");
    const std::string out = dir / "run";
    // Missing input file.
    EXPECT_EQ(run_cli("calibrate --model /nonexistent.pbw --corpus " + quoted(fixture("corpora/wiki-like.jsonl")) +
                      " --out " + quoted(out)),
              2);
    // Corrupt model.
    std::ofstream(dir / "bad.pbw") << "PBWEIGHTgarbage";
    EXPECT_EQ(run_cli("calibrate --model " + quoted(dir / "bad.pbw") + " --corpus " +
                      quoted(fixture("corpora/wiki-like.jsonl")) + " --out " + quoted(out)),
              2);
    // Both --sparsity and --nm.
    EXPECT_EQ(run_cli("prune --method wanda --sparsity 0.5 --nm 2:4 --stats x --model x --out " + quoted(out)), 2);
    // Undamped Hessian over too few tokens to be full rank.
    ASSERT_EQ(run_cli("calibrate --model " + quoted(fixture("tiny-2L.pbw")) + " --corpus " +
                      quoted(fixture("corpora/wiki-like.jsonl")) + " --n-samples 1 --seq-len 8 --damping 0 --out " +
                      quoted(out)),
              0);
    EXPECT_EQ(run_cli("prune --method sparsegpt --sparsity 0.5 --stats " + quoted(out + "/stats.bin") + " --model " +
                      quoted(fixture("tiny-2L.pbw")) + " --out " + quoted(out)),
              3);
    // No lexicon and no suggester.
    EXPECT_EQ(run_cli("nsa --dense " + quoted(fixture("tiny-2L.pbw")) + " --pruned " + quoted(fixture("tiny-2L.pbw")) +
                      " --samples " + quoted(fixture("nsa/sentiment_samples.jsonl")) + " --out " + quoted(out)),
              2);
}

TEST(Cli, ConfigFilePrecedence) {
    TempDir dir("config");
    std::ofstream(dir / "run.toml") << "[calibrate]\nn-samples = 4\nseq-len = 16\nseed = 9\n";
    const std::string model = quoted(fixture("tiny-2L.pbw"));
    const std::string corpus = quoted(fixture("corpora/wiki-like.jsonl"));
    ASSERT_EQ(run_cli("--config " + quoted(dir / "run.toml") + " calibrate --model " + model + " --corpus " + corpus +
                      " --seed 3 --out " + quoted(dir / "a")),
              0);
    const auto cfg = read_json(dir / "a/manifest.json")["stages"]["calibrate"];
    EXPECT_EQ(cfg["config"]["n_samples"], 4);   // from file
    EXPECT_EQ(cfg["config"]["seq_len"], 16);    // from file
    EXPECT_EQ(cfg["config"]["seed"], 3);        // flag wins
    EXPECT_EQ(cfg["config"]["damping_fraction"], 0.01);  // default
    EXPECT_FALSE(cfg["config_file_sha256"].get<std::string>().empty());
}

TEST(Cli, TimingsOnlyWhenRequested) {
    TempDir dir("timings");
    ASSERT_EQ(run_cli("--timings " + calibrate_args(dir / "t")), 0);
    EXPECT_TRUE(read_json(dir / "t/manifest.json")["stages"]["calibrate"].contains("wall_times_ms"));
}

TEST(Cli, ManifestsIndependentOfOutputDirectory) {
    TempDir dir("relabel");
    ASSERT_EQ(run_cli(calibrate_args(dir / "one")), 0);
    ASSERT_EQ(run_cli(calibrate_args(dir / "two")), 0);
    EXPECT_EQ(slurp(dir / "one/manifest.json"), slurp(dir / "two/manifest.json"));
    EXPECT_EQ(pb::file_sha256(dir / "one/stats.bin"), pb::file_sha256(dir / "two/stats.bin"));
    EXPECT_NE(slurp(dir / "one/manifest.json").find("<out>"), std::string::npos);
}

TEST(Sweep, SparsityGridEmitsOneRowPerRatio) {
    TempDir dir("sweep");
    ASSERT_EQ(run_cli("sweep --grid " + quoted(fixture("sweep/sparsity.json")) + " --out " + quoted(dir / "s")), 0);
    const auto rows = lines_of(slurp(dir / "s/sweep.csv"));
    ASSERT_EQ(rows.size(), 9u);
    std::string header;
    for (const auto& c : pb::sweep_csv_header()) header += (header.empty() ? "" : ",") + c;
    EXPECT_EQ(rows[0], header);
    std::vector<double> ppl;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::vector<std::string> f(1);
        for (char ch : rows[i]) {
            if (ch == ',') f.emplace_back();
            else f.back().push_back(ch);
        }
        ASSERT_EQ(f.size(), pb::sweep_csv_header().size());
        EXPECT_EQ(f[2], "wanda");
        EXPECT_EQ(f[4].find(','), std::string::npos);
        ppl.push_back(std::stod(f[8]));
    }
    EXPECT_LE(ppl.front(), ppl.back());
    EXPECT_TRUE(fs::exists(dir / "s/sweep_summary.json"));
    EXPECT_TRUE(fs::exists(dir / "s/sweep.html"));
}

TEST(Sweep, GridExpansionCountsAndOrder) {
    pb::SweepConfig c;
    c.models = {"m"};
    c.methods = {pb::Method::wanda, pb::Method::ria};
    c.patterns = {pb::Unstructured{0.25}, pb::Unstructured{0.5}, pb::NofM{2, 4}};
    c.corpora = {"a", "b"};
    c.seq_lens = {32, 64};
    const auto cells = pb::expand_grid(c);
    ASSERT_EQ(cells.size(), 2u * 3u * 2u * 2u);
    EXPECT_EQ(cells[0].id, "c000");
    EXPECT_EQ(cells[1].seq_len, 64u);
    EXPECT_EQ(cells[2].corpus, 1u);
    EXPECT_EQ(cells.back().method, pb::Method::ria);
    std::set<std::string> ids;
    for (const auto& cell : cells) ids.insert(cell.id);
    EXPECT_EQ(ids.size(), cells.size());
}

TEST(Sweep, MalformedGridIsInputError) {
    TempDir dir("badgrid");
    std::ofstream(dir / "g.json") << R"({"methods":["wanda"]})";
    EXPECT_EQ(run_cli("sweep --grid " + quoted(dir / "g.json") + " --out " + quoted(dir / "o")), 2);
}
