#pragma once

#include <functional>
#include <vector>

#include "diffuasr/dataset.hpp"
#include "diffuasr/module.hpp"
#include "json.hpp"

namespace diffuasr {

struct SrsConfig {
    std::int64_t num_items = 0;
    int dim = 64;
    int layers = 2;
    int max_len = 200;
    double dropout = 0.2;

    void validate() const;
    nlohmann::json to_json() const;
    static SrsConfig from_json(const nlohmann::json& j);
};

/// Causal self-attention next-item recommender (SASRec-style, one head,
/// pre-norm blocks, output tied to the item table). Histories are
/// left-padded so the most recent item always sits at position max_len - 1.
template <typename T>
class SrsModel {
   public:
    SrsModel(SrsConfig config, Rng& rng);

    const SrsConfig& config() const { return config_; }
    nn::ParameterSet<T>& params() { return params_; }
    const nn::ParameterSet<T>& params() const { return params_; }
    nn::Var<T> item_table() const { return table_; }

    /// Hidden states [B, L, d] for all positions of left-padded histories,
    /// L = longest (truncated) history in the batch.
    nn::Var<T> encode(const std::vector<ItemSeq>& histories, bool train = false, Rng* rng = nullptr) const;
    /// Same trunk fed with an embedding sequence [B, n, d] in place of table
    /// rows; every position counts as a real item.
    nn::Var<T> encode_embeddings(const nn::Var<T>& inputs) const;

    /// Logits [B, num_items + 1] at the last position; column 0 is the padding
    /// row and carries no meaning.
    nn::Var<T> score_next(const std::vector<ItemSeq>& histories) const;
    nn::Var<T> score_next_embeddings(const nn::Var<T>& inputs) const;

    /// Scores of `candidates[b]` after `histories[b]`, no graph recorded.
    std::vector<std::vector<double>> score_candidates(const std::vector<ItemSeq>& histories,
                                                      const std::vector<ItemSeq>& candidates) const;

   private:
    struct Block {
        nn::Var<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        nn::Var<T> ln2_g, ln2_b, w1, b1, w2, b2;
    };

    nn::Var<T> layer_norm(const nn::Var<T>& x, const nn::Var<T>& g, const nn::Var<T>& b) const;
    nn::Var<T> trunk(const nn::Var<T>& inputs, const std::vector<std::uint8_t>& real, bool train, Rng* rng) const;
    nn::Var<T> last_position(const nn::Var<T>& hidden) const;

    SrsConfig config_;
    nn::ParameterSet<T> params_;
    nn::Var<T> table_, positions_;
    std::vector<Block> blocks_;
    nn::Var<T> final_g_, final_b_;
};

struct SrsTrainConfig {
    int epochs = 50;
    int batch_size = 128;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
    /// Run the validator every this many epochs (0 disables validation).
    int eval_every = 0;
    /// Restore the parameters with the best validation score at the end.
    bool keep_best = true;
    /// Stop after this many validations without improvement (0 = never).
    int patience = 0;
};

struct SrsTrainLog {
    std::vector<double> epoch_loss;
    std::vector<std::pair<int, double>> validation;  ///< (epoch, score)
    int best_epoch = 0;
};

template <typename T>
using SrsValidator = std::function<double(const SrsModel<T>&)>;

/// Per-position next-item BCE with one sampled negative per positive.
/// `exclude[i]` lists the items negatives for sequence i must avoid; when no
/// item is left the negative falls back to any item other than the target.
template <typename T>
SrsTrainLog fit_sequences(SrsModel<T>& model, const std::vector<ItemSeq>& sequences,
                          const std::vector<ItemSeq>& exclude, const SrsTrainConfig& config,
                          const SrsValidator<T>& validator = {});

/// Trains on the train part of every user; negatives avoid the full sequence.
template <typename T>
SrsTrainLog train(SrsModel<T>& model, const SplitDataset& split, const SrsTrainConfig& config,
                  const SrsValidator<T>& validator = {});

/// Trains on reversed (train ++ valid) sequences; the test item is never seen.
template <typename T>
SrsTrainLog train_reverse(SrsModel<T>& model, const SplitDataset& split, const SrsTrainConfig& config);

/// M greedy top-1 extensions of each reversed raw sequence, returned in
/// forward order (the item generated last comes first).
template <typename T>
std::vector<ItemSeq> generate_preorder(const SrsModel<T>& reverse_model, const std::vector<ItemSeq>& raw, int m);

/// Uniform item in 1..num_items outside `history` (sorted) and != target;
/// falls back to any item != target when the history covers everything.
/// Returns 0 only when num_items == 1.
std::int64_t sample_negative(const ItemSeq& sorted_history, std::int64_t target, std::int64_t num_items, Rng& rng);

/// Greedy argmax over items 1..V of one logits row (smallest id on ties).
std::int64_t argmax_item(const double* logits, std::int64_t num_items);

}  // namespace diffuasr
