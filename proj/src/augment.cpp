#include "diffuasr/augment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "diffuasr/adam.hpp"

namespace diffuasr {

std::string to_string(AugmentStrategy s) {
    switch (s) {
        case AugmentStrategy::kNone: return "none";
        case AugmentStrategy::kRandom: return "random";
        case AugmentStrategy::kRandomSeq: return "random_seq";
        case AugmentStrategy::kReverseGen: return "reverse_gen";
        case AugmentStrategy::kDiffusionCF: return "diffusion_cf";
        case AugmentStrategy::kDiffusionCG: return "diffusion_cg";
    }
    return "?";
}

AugmentStrategy parse_augment_strategy(const std::string& name) {
    for (auto s : {AugmentStrategy::kNone, AugmentStrategy::kRandom, AugmentStrategy::kRandomSeq,
                   AugmentStrategy::kReverseGen, AugmentStrategy::kDiffusionCF, AugmentStrategy::kDiffusionCG})
        if (to_string(s) == name) return s;
    throw ParameterError("unknown augment strategy '" + name +
                         "' (none, random, random_seq, reverse_gen, diffusion_cf, diffusion_cg)");
}

bool is_diffusion(AugmentStrategy s) {
    return s == AugmentStrategy::kDiffusionCF || s == AugmentStrategy::kDiffusionCG;
}

nlohmann::json DiffusionTrainConfig::to_json() const {
    return {{"epochs", epochs},         {"batch_size", batch_size},         {"learning_rate", learning_rate},
            {"p_uncond", p_uncond},     {"detach_targets", detach_targets}, {"exclude_test", exclude_test},
            {"seed", seed}};
}

TrainedAugmentor train_augmentor(const InteractionDataset& ds, SUNetConfig net_config, const NoiseSchedule& schedule,
                                 const DiffusionTrainConfig& config, const EpochCallback& on_epoch) {
    if (config.epochs < 0 || config.batch_size < 1) throw ParameterError("diffusion epochs/batch size out of range");
    if (config.p_uncond < 0.0 || config.p_uncond > 1.0) throw ParameterError("p_uncond must be in [0, 1]");
    const auto pairs = build_diffusion_training_set(ds, net_config.augment_length, config.exclude_test);
    net_config.num_items = static_cast<int>(ds.num_items);
    Rng rng(config.seed);
    Rng init_rng = rng.split(1), order_rng = rng.split(2), loss_rng = rng.split(3);
    TrainedAugmentor out;
    out.net = std::make_unique<SUNet<float>>(net_config, init_rng);
    out.schedule = schedule;
    nn::Adam<float> opt(nn::AdamConfig{config.learning_rate});
    DiffusionLossOptions opts;
    opts.p_uncond = config.p_uncond;
    opts.detach_targets = config.detach_targets;

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng.engine());
        double total = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const auto stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<ItemSeq> targets, raw;
            for (auto i = start; i < stop; ++i) {
                targets.push_back(pairs[order[i]].target);
                raw.push_back(pairs[order[i]].raw);
            }
            auto loss = training_loss(*out.net, targets, raw, schedule, loss_rng, opts);
            out.net->params().zero_grad();
            nn::backward(loss);
            opt.step(out.net->params());
            total += static_cast<double>(loss.item()) * static_cast<double>(stop - start);
        }
        out.epoch_loss.push_back(total / static_cast<double>(pairs.size()));
        if (on_epoch) on_epoch(epoch, out.epoch_loss.back());
    }
    return out;
}

void AugmentConfig::validate() const {
    if (strategy != AugmentStrategy::kNone && m < 1)
        throw ParameterError("augment length M must be >= 1 for strategy " + to_string(strategy));
    if (gamma < 0.0) throw ParameterError("guidance scale gamma must be >= 0");
    if (sample_batch < 1) throw ParameterError("sample batch must be >= 1");
}

nlohmann::json AugmentConfig::to_json() const {
    return {{"strategy", to_string(strategy)}, {"M", m},
            {"gamma", gamma},                  {"seed", seed},
            {"short_only", short_only},        {"sample_batch", sample_batch}};
}

InteractionDataset AugmentedDataset::decoded() const {
    InteractionDataset out = raw;
    for (auto& [u, seq] : out.users) {
        auto it = aug.find(u);
        if (it != aug.end()) seq.insert(seq.begin(), it->second.begin(), it->second.end());
    }
    return out;
}

ItemSeq conditioning_items(const ItemSeq& seq) {
    if (seq.size() < 2) return seq;
    return ItemSeq(seq.begin(), seq.end() - 1);
}

std::string config_hash(const nlohmann::json& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : config.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

AugmentedDataset augment_dataset(const InteractionDataset& ds, const AugmentModels& models, const AugmentConfig& config,
                                 const nlohmann::json& provenance) {
    config.validate();
    AugmentedDataset out;
    out.raw = ds;
    nlohmann::json cfg = config.to_json();
    if (!provenance.is_null()) cfg["provenance"] = provenance;
    out.manifest = {{"strategy", to_string(config.strategy)}, {"M", config.m}, {"seed", config.seed}, {"config", cfg},
                    {"config_hash", config_hash(cfg)}};
    if (config.strategy == AugmentStrategy::kNone) return out;

    std::vector<std::int64_t> users;
    for (const auto& [u, seq] : ds.users)
        if (!config.short_only || group_for_length(static_cast<std::int64_t>(seq.size())) == UserGroup::kShort)
            users.push_back(u);
    const Rng root(config.seed);

    switch (config.strategy) {
        case AugmentStrategy::kRandom:
        case AugmentStrategy::kRandomSeq:
            for (auto u : users) {
                Rng rng = root.split(static_cast<std::uint64_t>(u));
                const ItemSeq support = conditioning_items(ds.users.at(u));
                ItemSeq items;
                for (int j = 0; j < config.m; ++j) {
                    if (config.strategy == AugmentStrategy::kRandom)
                        items.push_back(rng.uniform_int(1, ds.num_items));
                    else
                        items.push_back(support[static_cast<std::size_t>(
                            rng.uniform_int(0, static_cast<std::int64_t>(support.size()) - 1))]);
                }
                out.aug.emplace(u, std::move(items));
            }
            break;
        case AugmentStrategy::kReverseGen: {
            if (!models.reverse) throw ParameterError("reverse_gen augmentation needs a trained reverse model");
            for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(config.sample_batch)) {
                const auto stop = std::min(users.size(), start + static_cast<std::size_t>(config.sample_batch));
                std::vector<ItemSeq> raw;
                for (auto i = start; i < stop; ++i) raw.push_back(conditioning_items(ds.users.at(users[i])));
                auto gen = generate_preorder(*models.reverse, raw, config.m);
                for (auto i = start; i < stop; ++i) out.aug.emplace(users[i], std::move(gen[i - start]));
            }
            break;
        }
        case AugmentStrategy::kDiffusionCF:
        case AugmentStrategy::kDiffusionCG: {
            if (!models.net || !models.schedule) throw ParameterError(to_string(config.strategy) + " needs a trained augmentor");
            if (models.net->config().augment_length != config.m)
                throw ParameterError("augmentor was trained for M = " + std::to_string(models.net->config().augment_length) +
                                     ", asked for M = " + std::to_string(config.m));
            Guidance<float> guidance;
            guidance.gamma = config.gamma;
            if (config.strategy == AugmentStrategy::kDiffusionCF) {
                guidance.strategy = GuidanceStrategy::kClassifierFree;
            } else {
                guidance.strategy = GuidanceStrategy::kClassifierGuide;
                guidance.classifier = models.classifier;
                if (!models.classifier) throw ParameterError("diffusion_cg needs a pretrained classifier");
            }
            const auto table = models.net->item_embedding().value();
            for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(config.sample_batch)) {
                const auto stop = std::min(users.size(), start + static_cast<std::size_t>(config.sample_batch));
                std::vector<ItemSeq> raw;
                std::vector<Rng> streams;
                for (auto i = start; i < stop; ++i) {
                    raw.push_back(conditioning_items(ds.users.at(users[i])));
                    streams.push_back(root.split(static_cast<std::uint64_t>(users[i])));
                }
                const auto x0 = sample(*models.net, raw, guidance, *models.schedule, streams);
                const auto ids = round_to_items(x0, table, true, &out.rounding);
                for (auto i = start; i < stop; ++i) {
                    const auto off = static_cast<std::ptrdiff_t>((i - start) * static_cast<std::size_t>(config.m));
                    out.aug.emplace(users[i], ItemSeq(ids.begin() + off, ids.begin() + off + config.m));
                }
            }
            out.manifest["schedule"] = to_string(models.schedule->family);
            out.manifest["T"] = models.schedule->steps;
            out.manifest["gamma"] = config.gamma;
            out.manifest["zero_norm_rows"] = out.rounding.zero_norm_rows;
            break;
        }
        case AugmentStrategy::kNone: break;
    }
    return out;
}

void emit(const AugmentedDataset& aug, const std::filesystem::path& dir) {
    save_dataset(aug.decoded(), dir);
    const auto path = dir / "manifest.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << aug.manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace diffuasr
