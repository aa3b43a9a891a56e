// Command-line entry points for the augmentation pipeline:
//   synth -> preprocess -> train-diffusion -> augment -> train-srs -> evaluate
// plus `sweep`, which runs the last four stages over a grid of settings.
//
// Settings come from defaults, then --config FILE (key = value lines), then
// flags. Every config key is also accepted as --key VALUE.

#include <cstdlib>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "diffuasr/pipeline.hpp"

using namespace diffuasr;

namespace {

enum ExitCode {
    kOk = 0,
    kFailure = 1,
    kConfig = 2,
    kInputParse = 3,
    kEmptyData = 4,
    kIo = 5,
    kParameter = 6,
};

struct Common {
    std::string config_file;
    std::map<std::string, std::string> values;  // key -> raw flag text
    std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c, const std::map<std::string, std::string>& aliases = {}) {
    sub->add_option("--config", c.config_file, "key = value config file");
    sub->add_option("--set", c.sets, "extra key=value override (repeatable)");
    for (const auto& key : RunConfig::keys()) {
        bool aliased = false;
        for (const auto& [flag, target] : aliases) aliased = aliased || flag == key;
        if (aliased) continue;
        sub->add_option("--" + key, c.values[key], "override `" + key + "`");
    }
    for (const auto& [flag, target] : aliases)
        sub->add_option("--" + flag, c.values[target], "override `" + target + "`");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg;
    if (const char* env = std::getenv("DIFFUASR_OUT"); env && *env) cfg.out = env;
    if (!c.config_file.empty()) load_config_file(c.config_file, cfg);
    std::vector<std::string> errors;
    for (const auto& [key, value] : c.values) {
        if (value.empty()) continue;
        try {
            cfg.set(key, value);
        } catch (const ConfigError& e) {
            errors.push_back(e.what());
        }
    }
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        try {
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        } catch (const ConfigError& e) {
            errors.push_back(e.what());
        }
    }
    for (const auto& p : cfg.problems()) errors.push_back(p);
    if (!errors.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion-based sequence augmentation for sequential recommenders"};
    app.require_subcommand(1);

    Common synth_c, pre_c, diff_c, aug_c, srs_c, eval_c, sweep_c;
    std::string synth_output;
    auto* synth = app.add_subcommand("synth", "write the synthetic Markov-chain interaction log");
    add_common(synth, synth_c, {{"users", "synth_users"}, {"items", "synth_items"}});
    synth->add_option("--output", synth_output, "output TSV (default <out>/synth/interactions.tsv)");
    auto* pre = app.add_subcommand("preprocess", "filter, re-index and store an interaction log");
    add_common(pre, pre_c);
    auto* diff = app.add_subcommand("train-diffusion", "train the diffusion augmentor");
    add_common(diff, diff_c, {{"M", "m"}});
    auto* aug = app.add_subcommand("augment", "prepend generated items to every sequence");
    add_common(aug, aug_c, {{"M", "m"}});
    auto* srs = app.add_subcommand("train-srs", "train the recommender on an augmented dataset");
    add_common(srs, srs_c, {{"M", "m"}});
    auto* ev = app.add_subcommand("evaluate", "HR@K / NDCG@K with sampled negatives");
    add_common(ev, eval_c, {{"M", "m"}});
    auto* sweep = app.add_subcommand("sweep", "augment, train and evaluate over a grid");
    add_common(sweep, sweep_c,
               {{"M", "sweep_m"}, {"gammas", "sweep_gamma"}, {"schedules", "sweep_schedule"},
                {"strategies", "sweep_strategies"}});

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (synth->parsed()) {
            const auto cfg = resolve(synth_c);
            const std::filesystem::path out =
                synth_output.empty() ? std::filesystem::path(cfg.out) / "synth" / "interactions.tsv" : std::filesystem::path(synth_output);
            pipeline::stage_synth(cfg, out, std::cout);
        } else if (pre->parsed()) {
            pipeline::stage_preprocess(resolve(pre_c), std::cout);
        } else if (diff->parsed()) {
            pipeline::stage_train_diffusion(resolve(diff_c), std::cout);
        } else if (aug->parsed()) {
            pipeline::stage_augment(resolve(aug_c), std::cout);
        } else if (srs->parsed()) {
            pipeline::stage_train_srs(resolve(srs_c), std::cout);
        } else if (ev->parsed()) {
            pipeline::stage_evaluate(resolve(eval_c), std::cout);
        } else if (sweep->parsed()) {
            pipeline::stage_sweep(resolve(sweep_c), std::cout);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const ParseError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInputParse;
    } catch (const EmptyDatasetError& e) {
        std::cerr << "empty dataset: " << e.what() << '\n';
        return kEmptyData;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const ParameterError& e) {
        std::cerr << "parameter error: " << e.what() << '\n';
        return kParameter;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << '\n';
        return kParameter;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
