#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "diffuasr/dataset.hpp"
#include "diffuasr/srs.hpp"
#include "json.hpp"

namespace diffuasr {

struct RankMetrics {
    double hr = 0.0;
    double ndcg = 0.0;
};

/// hr = [rank <= k], ndcg = 1/log2(rank + 1) when rank <= k. `rank` is
/// 1-based among `candidates` items.
RankMetrics rank_metrics(std::int64_t rank, int k = 10, std::int64_t candidates = 101);

/// 1 + number of negatives scoring at least as high as the target.
std::int64_t pessimistic_rank(double target_score, const std::vector<double>& negative_scores);

/// Up to `count` distinct items from 1..num_items outside `sequence`, drawn
/// from the stream of (seed, user). When fewer are free, all of them are
/// returned in a shuffled order.
ItemSeq sample_eval_negatives(const ItemSeq& sequence, std::int64_t num_items, int count, std::uint64_t seed,
                              std::int64_t user);

/// Scores candidates[i] after histories[i].
using Scorer =
    std::function<std::vector<std::vector<double>>(const std::vector<ItemSeq>& histories, const std::vector<ItemSeq>& candidates)>;

template <typename T>
Scorer make_scorer(const SrsModel<T>& model, int batch = 256);

struct GroupMetrics {
    double hr = 0.0;
    double ndcg = 0.0;
    std::int64_t users = 0;
};

struct UserResult {
    std::int64_t user = 0;
    UserGroup group = UserGroup::kShort;
    std::int64_t rank = 0;
    std::int64_t candidates = 0;
};

struct EvalReport {
    int k = 10;
    GroupMetrics overall;
    std::map<UserGroup, GroupMetrics> groups;
    std::vector<std::uint64_t> seeds;
    std::int64_t short_pool_users = 0;  ///< users with fewer free items than requested negatives
    std::vector<UserResult> per_user;   ///< empty for averaged reports

    nlohmann::json to_json() const;
};

enum class EvalTarget { kTest, kValid };

struct EvalOptions {
    int negatives = 100;
    int k = 10;
    std::uint64_t seed = 1;
    EvalTarget target = EvalTarget::kTest;
};

/// Ranks each user's held-out item against sampled negatives. `split` is the
/// data the model sees (possibly augmented); `raw` supplies the sequences that
/// negatives must avoid and the length groups, so reports on raw and
/// augmented data share users, groups and negatives. Test histories are
/// train ++ valid, validation histories are train.
EvalReport evaluate(const Scorer& scorer, const SplitDataset& split, const InteractionDataset& raw,
                    const EvalOptions& options);

/// Mean over runs (per-seed reports), user counts taken from the first.
EvalReport average_reports(const std::vector<EvalReport>& reports);

/// Aligned text table; the best value of every column is starred, ties included.
std::string compare_table(const std::map<std::string, EvalReport>& reports);
/// Same columns as CSV at full precision.
std::string compare_csv(const std::map<std::string, EvalReport>& reports);

void write_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace diffuasr
