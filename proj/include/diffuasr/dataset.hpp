#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace diffuasr {

using ItemSeq = std::vector<std::int64_t>;

/// Per-user time-ordered item sequences. Item ids are dense in 1..num_items
/// (0 is padding); user ids are dense from 1.
struct InteractionDataset {
    std::map<std::int64_t, ItemSeq> users;
    std::int64_t num_items = 0;
    /// Raw tokens: item_vocab[v - 1] is the raw id of dense item v; same for users.
    std::vector<std::string> item_vocab;
    std::vector<std::string> user_vocab;

    std::int64_t num_users() const { return static_cast<std::int64_t>(users.size()); }
    std::int64_t num_interactions() const;
    /// Throws ParameterError when an id is outside 1..num_items or a sequence is empty.
    void check() const;
    bool operator==(const InteractionDataset&) const = default;
};

/// Leave-one-out: train = v_1..v_{n-2}, valid = v_{n-1}, test = v_n.
struct SplitDataset {
    std::map<std::int64_t, ItemSeq> train;
    std::map<std::int64_t, std::int64_t> valid_target;
    std::map<std::int64_t, std::int64_t> test_target;
    std::int64_t num_items = 0;

    /// train ++ [valid]: the history used when scoring the test item.
    ItemSeq test_history(std::int64_t user) const;
};

/// Reads `user<TAB>item<TAB>timestamp` lines. Users with fewer than `min_len`
/// interactions are dropped, then items are re-indexed in first-seen order.
/// Timestamp ties keep input-line order.
InteractionDataset parse_interactions(std::istream& in, int min_len = 3);
InteractionDataset load_interactions(const std::filesystem::path& path, int min_len = 3);

SplitDataset leave_one_out_split(const InteractionDataset& ds);

struct DiffusionPair {
    std::int64_t user = 0;
    ItemSeq target;  ///< first M items, the generation target
    ItemSeq raw;     ///< the remainder, used for the condition vector
};

/// Training set for the augmentor: sequences with n_u > M (counted after the
/// test item is removed when `exclude_test`), split into first M and the rest.
std::vector<DiffusionPair> build_diffusion_training_set(const InteractionDataset& ds, int m, bool exclude_test);

enum class UserGroup { kShort, kMedium, kLong };

const char* to_string(UserGroup g);
/// [3,5] short, (5,20] medium, above 20 long. Lengths below 3 count as short.
UserGroup group_for_length(std::int64_t n);
std::map<std::int64_t, UserGroup> assign_groups(const InteractionDataset& ds);

/// Canonical on-disk form: sequences.tsv (`user<TAB>v1,v2,...`), vocab.tsv
/// (`raw_id<TAB>dense_id`) and users.tsv (`raw_user<TAB>dense_user`).
void write_sequences(const InteractionDataset& ds, std::ostream& out);
InteractionDataset read_sequences(std::istream& in);
void save_dataset(const InteractionDataset& ds, const std::filesystem::path& dir);
/// Reads the canonical files. Without vocab.tsv, num_items is the largest id seen.
InteractionDataset load_dataset(const std::filesystem::path& dir);

}  // namespace diffuasr
