#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "diffuasr/diffusion.hpp"
#include "json.hpp"

namespace diffuasr {

enum class AugmentStrategy { kNone, kRandom, kRandomSeq, kReverseGen, kDiffusionCF, kDiffusionCG };

std::string to_string(AugmentStrategy s);
AugmentStrategy parse_augment_strategy(const std::string& name);
bool is_diffusion(AugmentStrategy s);

struct DiffusionTrainConfig {
    int epochs = 100;
    int batch_size = 128;
    double learning_rate = 1e-3;
    double p_uncond = 0.1;
    bool detach_targets = true;
    bool exclude_test = true;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
};

struct TrainedAugmentor {
    std::unique_ptr<SUNet<float>> net;
    NoiseSchedule schedule;
    std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Fits the noise predictor and item table on the pairs of
/// build_diffusion_training_set(ds, net_config.augment_length, exclude_test).
TrainedAugmentor train_augmentor(const InteractionDataset& ds, SUNetConfig net_config, const NoiseSchedule& schedule,
                                 const DiffusionTrainConfig& config, const EpochCallback& on_epoch = {});

struct AugmentConfig {
    AugmentStrategy strategy = AugmentStrategy::kDiffusionCF;
    int m = 6;
    double gamma = 1.0;
    std::uint64_t seed = 1;
    bool short_only = false;  ///< augment only users with n_u <= 5
    int sample_batch = 128;

    void validate() const;
    nlohmann::json to_json() const;
};

/// Trained models a strategy may need; unused members stay null.
struct AugmentModels {
    const SUNet<float>* net = nullptr;
    const NoiseSchedule* schedule = nullptr;
    const SrsModel<float>* classifier = nullptr;
    const SrsModel<float>* reverse = nullptr;
};

struct AugmentedDataset {
    InteractionDataset raw;
    std::map<std::int64_t, ItemSeq> aug;  ///< users without an entry are unchanged
    nlohmann::json manifest;
    RoundingStats rounding;

    /// aug ++ raw per user, sharing the raw vocabulary.
    InteractionDataset decoded() const;
};

/// The raw sequence minus its last (test) item; augmentation conditions on
/// this so the test target never leaks into generated items.
ItemSeq conditioning_items(const ItemSeq& seq);

/// Prepends M generated items to every selected user. `provenance` is merged
/// into the manifest next to the strategy config and its hash.
AugmentedDataset augment_dataset(const InteractionDataset& ds, const AugmentModels& models, const AugmentConfig& config,
                                 const nlohmann::json& provenance = {});

/// FNV-1a 64 of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Canonical dataset files plus manifest.json.
void emit(const AugmentedDataset& aug, const std::filesystem::path& dir);

}  // namespace diffuasr
