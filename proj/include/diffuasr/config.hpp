#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace diffuasr {

/// Every knob of the pipeline. Text form is flat `key = value` lines with
/// `#` comments; lists are comma-separated.
struct RunConfig {
    // data
    std::string input;
    std::string out = "runs";
    int min_len = 3;
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds{1, 2, 3};

    // augmentation
    std::string strategy = "diffusion_cf";
    int m = 6;
    double gamma = 1.0;
    bool short_only = false;
    int sample_batch = 128;

    // schedule
    std::string schedule = "linear";
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // noise predictor; `dim` is also the recommender width so classifier
    // guidance can feed states straight into the recommender
    int dim = 64;
    int levels = 2;
    std::vector<int> channel_mult{1, 2};
    int base_width = 32;
    int num_res_blocks = 2;
    double net_dropout = 0.0;

    // augmentor training; p_uncond < 0 selects 0.1 for classifier-free and 0 otherwise
    int diff_epochs = 100;
    int diff_batch = 128;
    double diff_lr = 1e-3;
    double p_uncond = -1.0;
    bool detach_targets = true;
    bool exclude_test = true;

    // recommender
    int srs_layers = 2;
    int srs_max_len = 200;
    double srs_dropout = 0.6;
    int srs_epochs = 200;
    int srs_batch = 128;
    double srs_lr = 1e-3;
    int srs_eval_every = 10;
    int srs_patience = 5;
    bool srs_keep_best = true;

    // evaluation
    int negatives = 100;
    int k = 10;

    // sweep and synth
    std::vector<int> sweep_m{};
    std::vector<double> sweep_gamma{};
    std::vector<std::string> sweep_schedule{};
    std::vector<std::string> sweep_strategies{};
    int synth_users = 500;
    int synth_items = 50;
    int synth_max_len = 40;

    /// Sets one field from text; throws ConfigError naming the key.
    void set(const std::string& key, const std::string& value);
    /// Every problem found, one message per offending field.
    std::vector<std::string> problems() const;
    /// Throws ConfigError listing all problems.
    void validate() const;
    double resolved_p_uncond() const;

    nlohmann::json to_json() const;
    static std::vector<std::string> keys();
};

/// Applies a config file on top of `config`. Unknown keys and bad values are
/// collected and reported together with their line numbers.
void load_config_file(const std::filesystem::path& path, RunConfig& config);
void parse_config_text(const std::string& text, RunConfig& config, const std::string& origin = "config");

}  // namespace diffuasr
