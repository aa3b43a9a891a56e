#include "diffuasr/srs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffuasr/adam.hpp"

namespace diffuasr {

using nn::Shape;
using nn::Tensor;
using nn::Var;

void SrsConfig::validate() const {
    if (num_items < 1) throw ParameterError("recommender needs num_items >= 1");
    if (dim < 2) throw ParameterError("recommender dim must be >= 2");
    if (layers < 0) throw ParameterError("recommender layers must be >= 0");
    if (max_len < 1) throw ParameterError("recommender max_len must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ParameterError("recommender dropout must be in [0, 1)");
}

nlohmann::json SrsConfig::to_json() const {
    return {{"num_items", num_items}, {"dim", dim}, {"layers", layers}, {"max_len", max_len}, {"dropout", dropout}};
}

SrsConfig SrsConfig::from_json(const nlohmann::json& j) {
    SrsConfig c;
    c.num_items = j.at("num_items");
    c.dim = j.at("dim");
    c.layers = j.at("layers");
    c.max_len = j.at("max_len");
    c.dropout = j.at("dropout");
    return c;
}

template <typename T>
SrsModel<T>::SrsModel(SrsConfig config, Rng& rng) : config_(config) {
    config_.validate();
    const std::int64_t d = config_.dim;
    const double std_init = 1.0 / std::sqrt(static_cast<double>(d));
    table_ = params_.add("item_embedding", nn::normal_init<T>(Shape{config_.num_items + 1, d}, std_init, rng));
    positions_ = params_.add("position_embedding", nn::normal_init<T>(Shape{config_.max_len, d}, std_init, rng));
    auto ones = [&] { return Tensor<T>(Shape{d}, T(1)); };
    auto zeros = [&] { return Tensor<T>(Shape{d}, T(0)); };
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        Block b;
        b.ln1_g = params_.add(p + "ln1.gain", ones());
        b.ln1_b = params_.add(p + "ln1.bias", zeros());
        b.wq = params_.add(p + "wq", nn::uniform_init<T>(Shape{d, d}, d, rng));
        b.bq = params_.add(p + "bq", zeros());
        b.wk = params_.add(p + "wk", nn::uniform_init<T>(Shape{d, d}, d, rng));
        b.bk = params_.add(p + "bk", zeros());
        b.wv = params_.add(p + "wv", nn::uniform_init<T>(Shape{d, d}, d, rng));
        b.bv = params_.add(p + "bv", zeros());
        b.wo = params_.add(p + "wo", nn::uniform_init<T>(Shape{d, d}, d, rng));
        b.bo = params_.add(p + "bo", zeros());
        b.ln2_g = params_.add(p + "ln2.gain", ones());
        b.ln2_b = params_.add(p + "ln2.bias", zeros());
        b.w1 = params_.add(p + "ffn.w1", nn::uniform_init<T>(Shape{d, d}, d, rng));
        b.b1 = params_.add(p + "ffn.b1", zeros());
        b.w2 = params_.add(p + "ffn.w2", nn::uniform_init<T>(Shape{d, d}, d, rng));
        b.b2 = params_.add(p + "ffn.b2", zeros());
        blocks_.push_back(b);
    }
    final_g_ = params_.add("final_ln.gain", ones());
    final_b_ = params_.add("final_ln.bias", zeros());
}

template <typename T>
Var<T> SrsModel<T>::layer_norm(const Var<T>& x, const Var<T>& g, const Var<T>& b) const {
    return nn::add(nn::mul(nn::normalize(x, 2), g), b);
}

template <typename T>
Var<T> SrsModel<T>::trunk(const Var<T>& inputs, const std::vector<std::uint8_t>& real, bool train, Rng* rng) const {
    const std::int64_t bsz = inputs.dim(0), len = inputs.dim(1), d = config_.dim;
    Tensor<T> mask_t(Shape{bsz, len, 1});
    for (std::int64_t i = 0; i < bsz * len; ++i) mask_t[i] = real[static_cast<std::size_t>(i)] ? T(1) : T(0);
    const Var<T> mask = nn::constant(std::move(mask_t));

    // key j is visible to query i when j <= i and j is a real item; the
    // diagonal stays visible so padded queries still normalize.
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(bsz * len * len), 0);
    for (std::int64_t b = 0; b < bsz; ++b)
        for (std::int64_t i = 0; i < len; ++i)
            for (std::int64_t j = 0; j <= i; ++j)
                keep[static_cast<std::size_t>((b * len + i) * len + j)] =
                    (j == i || real[static_cast<std::size_t>(b * len + j)]) ? 1 : 0;

    Var<T> h = nn::scale(nn::mul(inputs, mask), static_cast<T>(std::sqrt(static_cast<double>(d))));
    h = nn::add(h, nn::slice(positions_, 0, config_.max_len - len, len));
    h = nn::mul(nn::dropout(h, config_.dropout, train, rng), mask);
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    for (const auto& blk : blocks_) {
        Var<T> hn = layer_norm(h, blk.ln1_g, blk.ln1_b);
        Var<T> q = nn::add(nn::matmul(hn, blk.wq), blk.bq);
        Var<T> k = nn::add(nn::matmul(hn, blk.wk), blk.bk);
        Var<T> v = nn::add(nn::matmul(hn, blk.wv), blk.bv);
        Var<T> attn = nn::softmax(nn::scale(nn::bmm(q, k, true), inv_sqrt_d), &keep);
        attn = nn::dropout(attn, config_.dropout, train, rng);
        Var<T> a = nn::add(nn::matmul(nn::bmm(attn, v), blk.wo), blk.bo);
        h = nn::mul(nn::add(h, nn::dropout(a, config_.dropout, train, rng)), mask);
        Var<T> f = nn::relu(nn::add(nn::matmul(layer_norm(h, blk.ln2_g, blk.ln2_b), blk.w1), blk.b1));
        f = nn::add(nn::matmul(nn::dropout(f, config_.dropout, train, rng), blk.w2), blk.b2);
        h = nn::mul(nn::add(h, nn::dropout(f, config_.dropout, train, rng)), mask);
    }
    return layer_norm(h, final_g_, final_b_);
}

template <typename T>
Var<T> SrsModel<T>::encode(const std::vector<ItemSeq>& histories, bool train, Rng* rng) const {
    if (histories.empty()) throw ShapeError("recommender: empty batch");
    std::int64_t len = 0;
    for (const auto& h : histories) {
        if (h.empty()) throw ShapeError("recommender: empty history");
        len = std::max<std::int64_t>(len, std::min<std::int64_t>(static_cast<std::int64_t>(h.size()), config_.max_len));
    }
    const auto bsz = static_cast<std::int64_t>(histories.size());
    std::vector<std::int64_t> ids(static_cast<std::size_t>(bsz * len), 0);
    std::vector<std::uint8_t> real(ids.size(), 0);
    for (std::int64_t b = 0; b < bsz; ++b) {
        const auto& h = histories[static_cast<std::size_t>(b)];
        const auto n = std::min<std::int64_t>(static_cast<std::int64_t>(h.size()), len);
        for (std::int64_t i = 0; i < n; ++i) {
            const auto id = h[h.size() - static_cast<std::size_t>(n - i)];
            if (id < 1 || id > config_.num_items)
                throw ParameterError("recommender: item " + std::to_string(id) + " outside 1.." +
                                     std::to_string(config_.num_items));
            const auto slot = static_cast<std::size_t>(b * len + (len - n + i));
            ids[slot] = id;
            real[slot] = 1;
        }
    }
    return trunk(nn::embedding(table_, ids, Shape{bsz, len}), real, train, rng);
}

template <typename T>
Var<T> SrsModel<T>::encode_embeddings(const Var<T>& inputs) const {
    if (inputs.value().rank() != 3 || inputs.dim(2) != config_.dim)
        throw ShapeError("recommender: embedding input must be [B, n, " + std::to_string(config_.dim) + "], got " +
                         nn::shape_str(inputs.shape()));
    Var<T> x = inputs;
    if (x.dim(1) > config_.max_len) x = nn::slice(x, 1, x.dim(1) - config_.max_len, config_.max_len);
    std::vector<std::uint8_t> real(static_cast<std::size_t>(x.dim(0) * x.dim(1)), 1);
    return trunk(x, real, false, nullptr);
}

template <typename T>
Var<T> SrsModel<T>::last_position(const Var<T>& hidden) const {
    const std::int64_t len = hidden.dim(1);
    return nn::reshape(nn::slice(hidden, 1, len - 1, 1), Shape{hidden.dim(0), hidden.dim(2)});
}

template <typename T>
Var<T> SrsModel<T>::score_next(const std::vector<ItemSeq>& histories) const {
    return nn::matmul(last_position(encode(histories)), table_, true);
}

template <typename T>
Var<T> SrsModel<T>::score_next_embeddings(const Var<T>& inputs) const {
    return nn::matmul(last_position(encode_embeddings(inputs)), table_, true);
}

template <typename T>
std::vector<std::vector<double>> SrsModel<T>::score_candidates(const std::vector<ItemSeq>& histories,
                                                               const std::vector<ItemSeq>& candidates) const {
    if (histories.size() != candidates.size())
        throw ShapeError("score_candidates: " + std::to_string(histories.size()) + " histories vs " +
                         std::to_string(candidates.size()) + " candidate lists");
    nn::NoGradGuard no_grad;
    const Var<T> last = last_position(encode(histories));
    const std::int64_t d = config_.dim;
    const T* e = table_.value().ptr();
    std::vector<std::vector<double>> out(histories.size());
    for (std::size_t b = 0; b < histories.size(); ++b) {
        const T* h = last.value().ptr() + static_cast<std::int64_t>(b) * d;
        for (auto id : candidates[b]) {
            if (id < 1 || id > config_.num_items)
                throw ParameterError("score_candidates: item " + std::to_string(id) + " out of range");
            double s = 0;
            for (std::int64_t j = 0; j < d; ++j) s += static_cast<double>(h[j]) * static_cast<double>(e[id * d + j]);
            out[b].push_back(s);
        }
    }
    return out;
}

std::int64_t sample_negative(const ItemSeq& sorted_history, std::int64_t target, std::int64_t num_items, Rng& rng) {
    if (num_items <= 1) return 0;
    // Rejection first; the history is usually a small fraction of the catalog.
    for (int attempt = 0; attempt < 64; ++attempt) {
        const auto v = rng.uniform_int(1, num_items);
        if (v != target && !std::binary_search(sorted_history.begin(), sorted_history.end(), v)) return v;
    }
    ItemSeq free;
    for (std::int64_t v = 1; v <= num_items; ++v)
        if (v != target && !std::binary_search(sorted_history.begin(), sorted_history.end(), v)) free.push_back(v);
    if (free.empty()) {
        const auto v = rng.uniform_int(1, num_items - 1);
        return v >= target ? v + 1 : v;
    }
    return free[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(free.size()) - 1))];
}

std::int64_t argmax_item(const double* logits, std::int64_t num_items) {
    std::int64_t best = 1;
    for (std::int64_t v = 2; v <= num_items; ++v)
        if (logits[v] > logits[best]) best = v;
    return best;
}

template <typename T>
SrsTrainLog fit_sequences(SrsModel<T>& model, const std::vector<ItemSeq>& sequences, const std::vector<ItemSeq>& exclude,
                          const SrsTrainConfig& config, const SrsValidator<T>& validator) {
    if (sequences.size() != exclude.size())
        throw ShapeError("fit_sequences: " + std::to_string(sequences.size()) + " sequences vs " +
                         std::to_string(exclude.size()) + " exclusion lists");
    if (config.epochs < 0 || config.batch_size < 1) throw ParameterError("recommender epochs/batch size out of range");
    const auto& mc = model.config();

    std::vector<std::size_t> usable;
    std::vector<ItemSeq> sorted_excl(exclude.size());
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        if (sequences[i].size() >= 2) usable.push_back(i);
        sorted_excl[i] = exclude[i];
        std::sort(sorted_excl[i].begin(), sorted_excl[i].end());
    }
    if (usable.empty()) throw EmptyDatasetError("no training sequence has two or more items");

    nn::Adam<T> opt(nn::AdamConfig{config.learning_rate});
    Rng rng(config.seed);
    Rng shuffle_rng = rng.split(1), neg_rng = rng.split(2), drop_rng = rng.split(3);
    SrsTrainLog log;
    double best = -1.0;
    int stale = 0;
    std::vector<Tensor<T>> best_params;
    auto snapshot = [&] {
        best_params.clear();
        for (const auto& [name, v] : model.params().entries()) best_params.push_back(v.value());
    };

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(usable.begin(), usable.end(), shuffle_rng.engine());
        double total = 0;
        std::int64_t positions = 0;
        for (std::size_t start = 0; start < usable.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const auto stop = std::min(usable.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<ItemSeq> inputs;
            std::vector<const ItemSeq*> full;
            std::int64_t len = 0;
            for (auto s = start; s < stop; ++s) {
                const auto& seq = sequences[usable[s]];
                ItemSeq in(seq.begin(), seq.end() - 1);
                if (static_cast<int>(in.size()) > mc.max_len) in.erase(in.begin(), in.end() - mc.max_len);
                len = std::max<std::int64_t>(len, static_cast<std::int64_t>(in.size()));
                inputs.push_back(std::move(in));
                full.push_back(&seq);
            }
            const auto bsz = static_cast<std::int64_t>(inputs.size());
            std::vector<std::int64_t> pos(static_cast<std::size_t>(bsz * len), 0), neg(pos.size(), 0);
            Tensor<T> weight(Shape{bsz, len});
            std::int64_t count = 0;
            for (std::int64_t b = 0; b < bsz; ++b) {
                const auto& seq = *full[static_cast<std::size_t>(b)];
                const auto n = static_cast<std::int64_t>(inputs[static_cast<std::size_t>(b)].size());
                const auto& excl = sorted_excl[usable[start + static_cast<std::size_t>(b)]];
                for (std::int64_t i = 0; i < n; ++i) {
                    const auto slot = static_cast<std::size_t>(b * len + (len - n + i));
                    const auto target = seq[seq.size() - static_cast<std::size_t>(n - i)];
                    pos[slot] = target;
                    neg[slot] = sample_negative(excl, target, mc.num_items, neg_rng);
                    weight[static_cast<std::int64_t>(slot)] = T(1);
                    ++count;
                }
            }
            for (auto& w : weight.data()) w /= static_cast<T>(count);
            Tensor<T> neg_weight = weight;
            for (std::size_t i = 0; i < neg.size(); ++i)
                if (neg[i] == 0) neg_weight[static_cast<std::int64_t>(i)] = T(0);

            Var<T> h = model.encode(inputs, true, &drop_rng);
            const Var<T> table = model.item_table();
            Var<T> sp = nn::sum_last(nn::mul(h, nn::embedding(table, pos, Shape{bsz, len})));
            Var<T> sn = nn::sum_last(nn::mul(h, nn::embedding(table, neg, Shape{bsz, len})));
            Var<T> ll = nn::add(nn::mul(nn::log_sigmoid(sp), nn::constant(weight)),
                                nn::mul(nn::log_sigmoid(nn::scale(sn, T(-1))), nn::constant(neg_weight)));
            Var<T> loss = nn::scale(nn::sum(ll), T(-1));
            model.params().zero_grad();
            nn::backward(loss);
            opt.step(model.params());
            total += static_cast<double>(loss.item()) * static_cast<double>(count);
            positions += count;
        }
        log.epoch_loss.push_back(total / static_cast<double>(positions));

        if (validator && config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
            const double score = validator(model);
            log.validation.emplace_back(epoch, score);
            if (score > best) {
                best = score;
                log.best_epoch = epoch;
                stale = 0;
                if (config.keep_best) snapshot();
            } else if (config.patience > 0 && ++stale >= config.patience) {
                break;
            }
        }
    }
    if (config.keep_best && !best_params.empty()) {
        auto& entries = model.params().entries();
        for (std::size_t i = 0; i < entries.size(); ++i) entries[i].second.mutable_value() = best_params[i];
    }
    if (log.best_epoch == 0) log.best_epoch = static_cast<int>(log.epoch_loss.size());
    return log;
}

template <typename T>
SrsTrainLog train(SrsModel<T>& model, const SplitDataset& split, const SrsTrainConfig& config,
                  const SrsValidator<T>& validator) {
    std::vector<ItemSeq> seqs, excl;
    for (const auto& [u, items] : split.train) {
        seqs.push_back(items);
        ItemSeq all = items;
        all.push_back(split.valid_target.at(u));
        all.push_back(split.test_target.at(u));
        excl.push_back(std::move(all));
    }
    return fit_sequences(model, seqs, excl, config, validator);
}

template <typename T>
SrsTrainLog train_reverse(SrsModel<T>& model, const SplitDataset& split, const SrsTrainConfig& config) {
    std::vector<ItemSeq> seqs, excl;
    for (const auto& [u, items] : split.train) {
        ItemSeq s = items;
        s.push_back(split.valid_target.at(u));
        std::reverse(s.begin(), s.end());
        excl.push_back(s);
        seqs.push_back(std::move(s));
    }
    SrsTrainConfig c = config;
    c.eval_every = 0;
    return fit_sequences<T>(model, seqs, excl, c);
}

template <typename T>
std::vector<ItemSeq> generate_preorder(const SrsModel<T>& reverse_model, const std::vector<ItemSeq>& raw, int m) {
    if (m < 0) throw ParameterError("generate_preorder: M must be >= 0");
    std::vector<ItemSeq> out(raw.size());
    if (m == 0 || raw.empty()) return out;
    std::vector<ItemSeq> ctx;
    for (const auto& r : raw) ctx.emplace_back(r.rbegin(), r.rend());
    const auto v = reverse_model.config().num_items;
    nn::NoGradGuard no_grad;
    for (int step = 0; step < m; ++step) {
        const Var<T> logits = reverse_model.score_next(ctx);
        std::vector<double> row(static_cast<std::size_t>(v + 1));
        for (std::size_t b = 0; b < ctx.size(); ++b) {
            const T* l = logits.value().ptr() + static_cast<std::int64_t>(b) * (v + 1);
            for (std::int64_t j = 0; j <= v; ++j) row[static_cast<std::size_t>(j)] = static_cast<double>(l[j]);
            const auto next = argmax_item(row.data(), v);
            ctx[b].push_back(next);
            out[b].push_back(next);
        }
    }
    for (auto& g : out) std::reverse(g.begin(), g.end());
    return out;
}

#define DIFFUASR_INSTANTIATE(T)                                                                                  \
    template class SrsModel<T>;                                                                                  \
    template SrsTrainLog fit_sequences<T>(SrsModel<T>&, const std::vector<ItemSeq>&, const std::vector<ItemSeq>&, \
                                          const SrsTrainConfig&, const SrsValidator<T>&);                        \
    template SrsTrainLog train<T>(SrsModel<T>&, const SplitDataset&, const SrsTrainConfig&, const SrsValidator<T>&); \
    template SrsTrainLog train_reverse<T>(SrsModel<T>&, const SplitDataset&, const SrsTrainConfig&);             \
    template std::vector<ItemSeq> generate_preorder<T>(const SrsModel<T>&, const std::vector<ItemSeq>&, int);

DIFFUASR_INSTANTIATE(float)
DIFFUASR_INSTANTIATE(double)
#undef DIFFUASR_INSTANTIATE

}  // namespace diffuasr
