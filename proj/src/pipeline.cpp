#include "diffuasr/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "diffuasr/checkpoint.hpp"
#include "diffuasr/synth.hpp"

namespace diffuasr::pipeline {

namespace fs = std::filesystem;

SUNetConfig net_config(const RunConfig& cfg, std::int64_t num_items) {
    SUNetConfig c;
    c.augment_length = cfg.m;
    c.embedding_dim = cfg.dim;
    c.num_items = static_cast<int>(num_items);
    c.levels = cfg.levels;
    c.channel_mult = cfg.channel_mult;
    c.base_width = cfg.base_width;
    c.num_res_blocks = cfg.num_res_blocks;
    c.dropout = cfg.net_dropout;
    return c;
}

NoiseSchedule run_schedule(const RunConfig& cfg) {
    return make_schedule(parse_schedule_family(cfg.schedule), cfg.steps, cfg.beta_start, cfg.beta_end);
}

DiffusionTrainConfig diffusion_train_config(const RunConfig& cfg, std::uint64_t seed) {
    DiffusionTrainConfig c;
    c.epochs = cfg.diff_epochs;
    c.batch_size = cfg.diff_batch;
    c.learning_rate = cfg.diff_lr;
    c.p_uncond = cfg.resolved_p_uncond();
    c.detach_targets = cfg.detach_targets;
    c.exclude_test = cfg.exclude_test;
    c.seed = seed;
    return c;
}

SrsConfig srs_config(const RunConfig& cfg, std::int64_t num_items) {
    SrsConfig c;
    c.num_items = num_items;
    c.dim = cfg.dim;
    c.layers = cfg.srs_layers;
    c.max_len = cfg.srs_max_len;
    c.dropout = cfg.srs_dropout;
    return c;
}

SrsTrainConfig srs_train_config(const RunConfig& cfg, std::uint64_t seed) {
    SrsTrainConfig c;
    c.epochs = cfg.srs_epochs;
    c.batch_size = cfg.srs_batch;
    c.learning_rate = cfg.srs_lr;
    c.seed = seed;
    c.eval_every = cfg.srs_eval_every;
    c.keep_best = cfg.srs_keep_best;
    c.patience = cfg.srs_patience;
    return c;
}

AugmentConfig augment_config(const RunConfig& cfg, std::uint64_t seed) {
    AugmentConfig c;
    c.strategy = parse_augment_strategy(cfg.strategy);
    c.m = cfg.m;
    c.gamma = cfg.gamma;
    c.seed = seed;
    c.short_only = cfg.short_only;
    c.sample_batch = cfg.sample_batch;
    return c;
}

std::unique_ptr<SrsModel<float>> fit_recommender(const InteractionDataset& data, const InteractionDataset& raw,
                                                 const RunConfig& cfg, std::uint64_t seed, SrsTrainLog* log) {
    Rng init = Rng(seed).split(101);
    auto model = std::make_unique<SrsModel<float>>(srs_config(cfg, data.num_items), init);
    const SplitDataset split = leave_one_out_split(data);
    SrsValidator<float> validator;
    if (cfg.srs_eval_every > 0) {
        validator = [&split, &raw, &cfg, seed](const SrsModel<float>& m) {
            EvalOptions opt;
            opt.negatives = cfg.negatives;
            opt.k = cfg.k;
            opt.seed = seed;
            opt.target = EvalTarget::kValid;
            return evaluate(make_scorer(m), split, raw, opt).overall.hr;
        };
    }
    auto l = train(*model, split, srs_train_config(cfg, seed), validator);
    if (log) *log = std::move(l);
    return model;
}

std::unique_ptr<SrsModel<float>> fit_reverse_generator(const InteractionDataset& raw, const RunConfig& cfg,
                                                       std::uint64_t seed) {
    Rng init = Rng(seed).split(202);
    auto model = std::make_unique<SrsModel<float>>(srs_config(cfg, raw.num_items), init);
    SrsTrainConfig tc = srs_train_config(cfg, seed);
    train_reverse(*model, leave_one_out_split(raw), tc);
    return model;
}

EvalReport evaluate_recommender(const SrsModel<float>& model, const InteractionDataset& data,
                                const InteractionDataset& raw, const RunConfig& cfg, std::uint64_t seed) {
    EvalOptions opt;
    opt.negatives = cfg.negatives;
    opt.k = cfg.k;
    opt.seed = seed;
    return evaluate(make_scorer(model), leave_one_out_split(data), raw, opt);
}

namespace {

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

fs::path run_dir(const RunConfig& cfg, const char* kind, std::uint64_t seed) {
    return fs::path(cfg.out) / kind / run_name(cfg, seed);
}

InteractionDataset load_raw(const RunConfig& cfg) {
    const auto dir = data_dir(cfg);
    if (!fs::exists(dir / "sequences.tsv"))
        throw IoError("no preprocessed dataset at " + dir.string() + "; run `preprocess` first");
    return load_dataset(dir);
}

}  // namespace

std::string run_name(const RunConfig& cfg, std::uint64_t seed) {
    const auto strategy = parse_augment_strategy(cfg.strategy);
    std::string name = to_string(strategy);
    if (strategy != AugmentStrategy::kNone) name += "_M" + std::to_string(cfg.m);
    if (is_diffusion(strategy)) name += "_g" + fmt_g(cfg.gamma) + "_" + cfg.schedule + "_T" + std::to_string(cfg.steps);
    return name + "_s" + std::to_string(seed);
}

fs::path data_dir(const RunConfig& cfg) { return fs::path(cfg.out) / "data"; }

fs::path diffusion_dir(const RunConfig& cfg, std::uint64_t seed) {
    const auto strategy = parse_augment_strategy(cfg.strategy);
    const std::string tag = strategy == AugmentStrategy::kDiffusionCG ? "cg" : "cf";
    return fs::path(cfg.out) / "diffusion" /
           (tag + "_M" + std::to_string(cfg.m) + "_" + cfg.schedule + "_T" + std::to_string(cfg.steps) + "_s" +
            std::to_string(seed));
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

void save_augmentor(const TrainedAugmentor& aug, const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    const auto& s = aug.schedule;
    nlohmann::json config{{"net", aug.net->config().to_json()},
                          {"schedule",
                           {{"family", to_string(s.family)},
                            {"steps", s.steps},
                            {"beta_start", s.beta_start},
                            {"beta_end", s.beta_end}}},
                          {"run", cfg.to_json()}};
    nn::save_checkpoint(dir / "model.ckpt", aug.net->params(), config);
    config["epoch_loss"] = aug.epoch_loss;
    write_json(config, dir / "manifest.json");
}

TrainedAugmentor load_augmentor(const fs::path& dir) {
    const auto path = dir / "model.ckpt";
    if (!fs::exists(path)) throw IoError("no augmentor checkpoint at " + path.string() + "; run `train-diffusion` first");
    const auto config = nn::read_checkpoint_manifest(path).at("config");
    TrainedAugmentor out;
    Rng rng(0);
    out.net = std::make_unique<SUNet<float>>(SUNetConfig::from_json(config.at("net")), rng);
    nn::load_checkpoint(path, out.net->params());
    const auto& s = config.at("schedule");
    out.schedule = make_schedule(parse_schedule_family(s.at("family")), s.at("steps"), s.at("beta_start"),
                                 s.at("beta_end"));
    if (fs::exists(dir / "manifest.json")) {
        const auto m = read_json(dir / "manifest.json");
        if (m.contains("epoch_loss")) out.epoch_loss = m["epoch_loss"].get<std::vector<double>>();
    }
    return out;
}

void save_recommender(const SrsModel<float>& model, const nlohmann::json& extra, const fs::path& dir) {
    fs::create_directories(dir);
    nlohmann::json config{{"srs", model.config().to_json()}, {"extra", extra}};
    nn::save_checkpoint(dir / "model.ckpt", model.params(), config);
    write_json(config, dir / "manifest.json");
}

std::unique_ptr<SrsModel<float>> load_recommender(const fs::path& dir) {
    const auto path = dir / "model.ckpt";
    if (!fs::exists(path)) throw IoError("no recommender checkpoint at " + path.string());
    const auto config = nn::read_checkpoint_manifest(path).at("config");
    Rng rng(0);
    auto model = std::make_unique<SrsModel<float>>(SrsConfig::from_json(config.at("srs")), rng);
    nn::load_checkpoint(path, model->params());
    return model;
}

void stage_synth(const RunConfig& cfg, const fs::path& output, std::ostream& log) {
    SynthConfig sc;
    sc.users = cfg.synth_users;
    sc.items = cfg.synth_items;
    sc.min_len = cfg.min_len;
    sc.max_len = cfg.synth_max_len;
    sc.seed = cfg.seed;
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    std::ofstream out(output, std::ios::binary);
    if (!out) throw IoError("cannot write " + output.string());
    write_synthetic_interactions(sc, out);
    if (!out) throw IoError("write failed: " + output.string());
    log << "synth: " << sc.users << " users over " << sc.items << " items -> " << output.string() << '\n';
}

void stage_preprocess(const RunConfig& cfg, std::ostream& log) {
    if (cfg.input.empty()) throw ConfigError("input: preprocess needs an interaction file");
    const auto ds = load_interactions(cfg.input, cfg.min_len);
    const auto dir = data_dir(cfg);
    save_dataset(ds, dir);
    std::map<std::string, std::int64_t> groups;
    for (const auto& [u, g] : assign_groups(ds)) ++groups[to_string(g)];
    write_json({{"stage", "preprocess"},
                {"config", cfg.to_json()},
                {"users", ds.num_users()},
                {"items", ds.num_items},
                {"interactions", ds.num_interactions()},
                {"groups", groups}},
               dir / "manifest.json");
    log << "preprocess: " << ds.num_users() << " users, " << ds.num_items << " items, " << ds.num_interactions()
        << " interactions -> " << dir.string() << '\n';
}

void stage_train_diffusion(const RunConfig& cfg, std::ostream& log) {
    const auto raw = load_raw(cfg);
    const auto dir = diffusion_dir(cfg, cfg.seed);
    log << "train-diffusion: " << dir.string() << '\n';
    auto aug = train_augmentor(raw, net_config(cfg, raw.num_items), run_schedule(cfg), diffusion_train_config(cfg, cfg.seed),
                               [&log](int epoch, double loss) { log << "  epoch " << epoch << " loss " << loss << '\n'; });
    save_augmentor(aug, cfg, dir);
}

namespace {

AugmentedDataset augment_with_models(const RunConfig& cfg, const InteractionDataset& raw, std::uint64_t seed,
                                     std::ostream& log) {
    const auto ac = augment_config(cfg, seed);
    AugmentModels models;
    TrainedAugmentor trained;
    std::unique_ptr<SrsModel<float>> classifier, reverse;
    if (is_diffusion(ac.strategy)) {
        trained = load_augmentor(diffusion_dir(cfg, seed));
        models.net = trained.net.get();
        models.schedule = &trained.schedule;
    }
    if (ac.strategy == AugmentStrategy::kDiffusionCG) {
        const auto dir = fs::path(cfg.out) / "classifier" / ("s" + std::to_string(seed));
        if (fs::exists(dir / "model.ckpt")) {
            classifier = load_recommender(dir);
        } else {
            log << "  pretraining classifier on raw data\n";
            classifier = fit_recommender(raw, raw, cfg, seed);
            save_recommender(*classifier, {{"role", "classifier"}, {"seed", seed}}, dir);
        }
        models.classifier = classifier.get();
    }
    if (ac.strategy == AugmentStrategy::kReverseGen) {
        log << "  training reverse generator\n";
        reverse = fit_reverse_generator(raw, cfg, seed);
        models.reverse = reverse.get();
    }
    return augment_dataset(raw, models, ac, {{"run", cfg.to_json()}});
}

void train_srs_for(const RunConfig& cfg, const InteractionDataset& raw, std::uint64_t seed, std::ostream& log) {
    const auto data = load_dataset(run_dir(cfg, "augmented", seed));
    SrsTrainLog tl;
    auto model = fit_recommender(data, raw, cfg, seed, &tl);
    nlohmann::json validation = nlohmann::json::array();
    for (const auto& [e, s] : tl.validation) validation.push_back({e, s});
    save_recommender(*model,
                     {{"run", cfg.to_json()}, {"seed", seed}, {"epoch_loss", tl.epoch_loss},
                      {"validation_hr", validation}, {"best_epoch", tl.best_epoch}},
                     run_dir(cfg, "srs", seed));
    log << "  recommender trained for " << tl.epoch_loss.size() << " epochs (best " << tl.best_epoch << ")\n";
}

EvalReport evaluate_for(const RunConfig& cfg, const InteractionDataset& raw, std::uint64_t seed) {
    const auto model = load_recommender(run_dir(cfg, "srs", seed));
    const auto data = load_dataset(run_dir(cfg, "augmented", seed));
    auto report = evaluate_recommender(*model, data, raw, cfg, seed);
    const auto dir = run_dir(cfg, "eval", seed);
    write_report(report, dir);
    return report;
}

}  // namespace

void stage_augment(const RunConfig& cfg, std::ostream& log) {
    const auto raw = load_raw(cfg);
    const auto dir = run_dir(cfg, "augmented", cfg.seed);
    log << "augment: " << dir.string() << '\n';
    emit(augment_with_models(cfg, raw, cfg.seed, log), dir);
}

void stage_train_srs(const RunConfig& cfg, std::ostream& log) {
    const auto raw = load_raw(cfg);
    log << "train-srs: " << run_dir(cfg, "srs", cfg.seed).string() << '\n';
    train_srs_for(cfg, raw, cfg.seed, log);
}

EvalReport stage_evaluate(const RunConfig& cfg, std::ostream& log) {
    const auto raw = load_raw(cfg);
    auto report = evaluate_for(cfg, raw, cfg.seed);
    log << "evaluate: " << run_dir(cfg, "eval", cfg.seed).string() << '\n'
        << compare_table({{run_name(cfg, cfg.seed), report}});
    return report;
}

void stage_sweep(const RunConfig& cfg, std::ostream& log) {
    const auto raw = load_raw(cfg);
    const std::vector<int> ms = cfg.sweep_m.empty() ? std::vector<int>{cfg.m} : cfg.sweep_m;
    const std::vector<double> gammas = cfg.sweep_gamma.empty() ? std::vector<double>{cfg.gamma} : cfg.sweep_gamma;
    const std::vector<std::string> schedules =
        cfg.sweep_schedule.empty() ? std::vector<std::string>{cfg.schedule} : cfg.sweep_schedule;
    const std::vector<std::string> strategies =
        cfg.sweep_strategies.empty() ? std::vector<std::string>{cfg.strategy} : cfg.sweep_strategies;

    std::map<std::string, EvalReport> table;
    for (const auto& strategy : strategies)
        for (int m : ms)
            for (double gamma : gammas)
                for (const auto& schedule : schedules) {
                    RunConfig c = cfg;
                    c.strategy = strategy;
                    c.m = m;
                    c.gamma = gamma;
                    c.schedule = schedule;
                    const auto kind = parse_augment_strategy(strategy);
                    // Settings a strategy ignores collapse onto one run.
                    if (!is_diffusion(kind)) {
                        c.gamma = cfg.gamma;
                        c.schedule = cfg.schedule;
                    }
                    if (kind == AugmentStrategy::kNone) c.m = cfg.m;
                    std::string key = run_name(c, 0);
                    key.resize(key.size() - 3);  // drop "_s0"
                    if (table.count(key)) continue;
                    c.validate();
                    std::vector<EvalReport> runs;
                    for (auto seed : cfg.seeds) {
                        log << "sweep: " << run_name(c, seed) << '\n';
                        if (is_diffusion(kind) && !fs::exists(diffusion_dir(c, seed) / "model.ckpt")) {
                            auto aug = train_augmentor(raw, net_config(c, raw.num_items), run_schedule(c),
                                                       diffusion_train_config(c, seed));
                            save_augmentor(aug, c, diffusion_dir(c, seed));
                        }
                        if (!fs::exists(run_dir(c, "augmented", seed) / "manifest.json"))
                            emit(augment_with_models(c, raw, seed, log), run_dir(c, "augmented", seed));
                        if (!fs::exists(run_dir(c, "srs", seed) / "model.ckpt")) train_srs_for(c, raw, seed, log);
                        runs.push_back(evaluate_for(c, raw, seed));
                    }
                    table.emplace(key, average_reports(runs));
                }
    const auto dir = fs::path(cfg.out) / "sweep";
    fs::create_directories(dir);
    const auto text = compare_table(table);
    {
        std::ofstream out(dir / "comparison.txt", std::ios::binary);
        out << text;
    }
    {
        std::ofstream out(dir / "comparison.csv", std::ios::binary);
        out << compare_csv(table);
    }
    nlohmann::json reports;
    for (const auto& [k, r] : table) reports[k] = r.to_json();
    write_json({{"config", cfg.to_json()}, {"reports", reports}}, dir / "manifest.json");
    log << text;
}

}  // namespace diffuasr::pipeline
