#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>

#include "diffuasr/augment.hpp"
#include "diffuasr/config.hpp"
#include "diffuasr/eval.hpp"

// Stage functions shared by the command-line tool and the acceptance suite.

namespace diffuasr::pipeline {

SUNetConfig net_config(const RunConfig& cfg, std::int64_t num_items);
NoiseSchedule run_schedule(const RunConfig& cfg);
DiffusionTrainConfig diffusion_train_config(const RunConfig& cfg, std::uint64_t seed);
SrsConfig srs_config(const RunConfig& cfg, std::int64_t num_items);
SrsTrainConfig srs_train_config(const RunConfig& cfg, std::uint64_t seed);
AugmentConfig augment_config(const RunConfig& cfg, std::uint64_t seed);

/// Trains a recommender on `data` (raw or augmented). Validation, when
/// enabled, scores the penultimate raw item against negatives drawn as in
/// evaluation.
std::unique_ptr<SrsModel<float>> fit_recommender(const InteractionDataset& data, const InteractionDataset& raw,
                                                 const RunConfig& cfg, std::uint64_t seed, SrsTrainLog* log = nullptr);

/// Reverse-order generator for the reverse_gen baseline.
std::unique_ptr<SrsModel<float>> fit_reverse_generator(const InteractionDataset& raw, const RunConfig& cfg,
                                                       std::uint64_t seed);

EvalReport evaluate_recommender(const SrsModel<float>& model, const InteractionDataset& data,
                                const InteractionDataset& raw, const RunConfig& cfg, std::uint64_t seed);

// On-disk layout under cfg.out:
//   data/                       canonical raw dataset (preprocess)
//   diffusion/<tag>/            augmentor checkpoint + manifest
//   classifier/s<seed>/         recommender pretrained on raw data (classifier guidance)
//   augmented/<run>/            augmented dataset + manifest
//   srs/<run>/                  recommender trained on the augmented data
//   eval/<run>/                 report.json, report.csv
//   sweep/                      comparison.txt, comparison.csv
std::string run_name(const RunConfig& cfg, std::uint64_t seed);
std::filesystem::path data_dir(const RunConfig& cfg);
std::filesystem::path diffusion_dir(const RunConfig& cfg, std::uint64_t seed);

void save_augmentor(const TrainedAugmentor& aug, const RunConfig& cfg, const std::filesystem::path& dir);
TrainedAugmentor load_augmentor(const std::filesystem::path& dir);
void save_recommender(const SrsModel<float>& model, const nlohmann::json& extra, const std::filesystem::path& dir);
std::unique_ptr<SrsModel<float>> load_recommender(const std::filesystem::path& dir);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);

// CLI stages. Each reads the artifacts of the previous stage and writes its
// own directory plus a manifest holding the full configuration.
void stage_synth(const RunConfig& cfg, const std::filesystem::path& output, std::ostream& log);
void stage_preprocess(const RunConfig& cfg, std::ostream& log);
void stage_train_diffusion(const RunConfig& cfg, std::ostream& log);
void stage_augment(const RunConfig& cfg, std::ostream& log);
void stage_train_srs(const RunConfig& cfg, std::ostream& log);
EvalReport stage_evaluate(const RunConfig& cfg, std::ostream& log);
/// Fans out over sweep_m × sweep_gamma × sweep_schedule × sweep_strategies
/// (each defaulting to the single configured value) and every seed, reusing
/// finished stages, then writes the comparison table.
void stage_sweep(const RunConfig& cfg, std::ostream& log);

}  // namespace diffuasr::pipeline
