#include "diffuasr/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

using namespace diffuasr;
namespace fs = std::filesystem;

namespace {
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Small enough to run every stage in seconds.
RunConfig tiny_run(const fs::path& out) {
    RunConfig c;
    c.out = out.string();
    c.synth_users = 60;
    c.synth_items = 20;
    c.m = 2;
    c.steps = 10;
    c.dim = 16;
    c.base_width = 8;
    c.num_res_blocks = 1;
    c.diff_epochs = 2;
    c.diff_batch = 32;
    c.srs_layers = 1;
    c.srs_epochs = 3;
    c.srs_eval_every = 1;
    c.seeds = {1};
    return c;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DIFFUASR_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST_CASE("stages chain through on-disk artifacts without touching their inputs") {
    const auto out = fs::temp_directory_path() / "diffuasr_pipeline";
    fs::remove_all(out);
    auto cfg = tiny_run(out);
    std::ostringstream log;
    const auto log_path = out / "synth" / "interactions.tsv";
    pipeline::stage_synth(cfg, log_path, log);
    cfg.input = log_path.string();
    const auto input_bytes = slurp(log_path);

    pipeline::stage_preprocess(cfg, log);
    CHECK(fs::exists(pipeline::data_dir(cfg) / "sequences.tsv"));
    CHECK(fs::exists(pipeline::data_dir(cfg) / "manifest.json"));
    const auto data_bytes = slurp(pipeline::data_dir(cfg) / "sequences.tsv");

    pipeline::stage_train_diffusion(cfg, log);
    const auto ddir = pipeline::diffusion_dir(cfg, cfg.seed);
    CHECK(fs::exists(ddir / "model.ckpt"));
    auto reloaded = pipeline::load_augmentor(ddir);
    CHECK(reloaded.schedule.steps == 10);
    CHECK(reloaded.epoch_loss.size() == 2);

    pipeline::stage_augment(cfg, log);
    pipeline::stage_train_srs(cfg, log);
    auto report = pipeline::stage_evaluate(cfg, log);
    CHECK(report.overall.users == 60);

    const auto name = pipeline::run_name(cfg, cfg.seed);
    for (const auto& p : {out / "augmented" / name / "manifest.json", out / "srs" / name / "model.ckpt",
                          out / "eval" / name / "report.json", out / "eval" / name / "report.csv"})
        CHECK(fs::exists(p));
    auto manifest = nlohmann::json::parse(slurp(out / "augmented" / name / "manifest.json"));
    CHECK(manifest["config"]["provenance"]["run"] == cfg.to_json());

    // Inputs of every stage are untouched.
    CHECK(slurp(log_path) == input_bytes);
    CHECK(slurp(pipeline::data_dir(cfg) / "sequences.tsv") == data_bytes);

    // A recommender reloads to identical scores.
    auto model = pipeline::load_recommender(out / "srs" / name);
    auto again = pipeline::load_recommender(out / "srs" / name);
    CHECK(model->score_next({{1, 2}}).value() == again->score_next({{1, 2}}).value());

    // Sweep over M fans out into one run per value plus one table.
    cfg.sweep_m = {2, 3};
    cfg.sweep_strategies = {"diffusion_cf", "none"};
    pipeline::stage_sweep(cfg, log);
    const auto table = slurp(out / "sweep" / "comparison.txt");
    CHECK(std::count(table.begin(), table.end(), '\n') == 4);  // header + cf M2, cf M3, none
    CHECK(fs::exists(out / "sweep" / "comparison.csv"));
    int augmented_runs = 0;
    for (const auto& e : fs::directory_iterator(out / "augmented")) augmented_runs += e.is_directory();
    CHECK(augmented_runs == 3);
    fs::remove_all(out);
}

TEST_CASE("run names separate the knobs that change results") {
    RunConfig a;
    auto b = a;
    b.gamma = 10;
    auto c = a;
    c.schedule = "cosine";
    CHECK(pipeline::run_name(a, 1) != pipeline::run_name(b, 1));
    CHECK(pipeline::run_name(a, 1) != pipeline::run_name(c, 1));
    CHECK(pipeline::run_name(a, 1) != pipeline::run_name(a, 2));
    CHECK(pipeline::diffusion_dir(a, 1) == pipeline::diffusion_dir(b, 1));  // gamma is a sampling knob
}

TEST_CASE("command-line tool: determinism and categorized exit codes") {
    const auto dir = fs::temp_directory_path() / "diffuasr_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto a = dir / "a.tsv", b = dir / "b.tsv";
    CHECK(run_cli("synth --users 500 --items 50 --seed 1 --output " + a.string()) == 0);
    CHECK(run_cli("synth --users 500 --items 50 --seed 1 --output " + b.string()) == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK_FALSE(slurp(a).empty());

    CHECK(run_cli("augment --m 0 --dim 15 --out " + dir.string()) == 2);
    std::ofstream(dir / "bad.tsv") << "u\t1\n";
    CHECK(run_cli("preprocess --input " + (dir / "bad.tsv").string() + " --out " + dir.string()) == 3);
    std::ofstream(dir / "short.tsv") << "u\t1\t1\n";
    CHECK(run_cli("preprocess --input " + (dir / "short.tsv").string() + " --out " + dir.string()) == 4);
    CHECK(run_cli("preprocess --input " + (dir / "missing.tsv").string() + " --out " + dir.string()) == 5);
    CHECK(run_cli("bogus-command") != 0);
    fs::remove_all(dir);
}
