#include "diffuasr/srs.hpp"

#include <algorithm>
#include <map>

#include "diffuasr/synth.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace diffuasr;
using namespace diffuasr::nn;

namespace {
SrsConfig tiny(std::int64_t items, int max_len = 12) {
    SrsConfig c;
    c.num_items = items;
    c.dim = 16;
    c.layers = 1;
    c.max_len = max_len;
    c.dropout = 0.0;
    return c;
}

// Ten users alternating between items 1 and 2, each starting differently.
SplitDataset alternating() {
    InteractionDataset ds;
    ds.num_items = 2;
    for (int u = 1; u <= 10; ++u) {
        ItemSeq s;
        for (int i = 0; i < 8; ++i) s.push_back(1 + (i + u) % 2);
        ds.users[u] = s;
    }
    return leave_one_out_split(ds);
}

// Position of `target` when `row` is sorted descending (1-based, pessimistic).
int rank_of(const std::vector<double>& row, std::size_t target) {
    int r = 1;
    for (std::size_t i = 0; i < row.size(); ++i)
        if (i != target && row[i] >= row[target]) ++r;
    return r;
}
}  // namespace

TEST_CASE("different histories give different logits") {
    Rng rng(1);
    SrsModel<double> m(tiny(5), rng);
    auto l = m.score_next({{1, 2}, {3, 4}}).value();
    CHECK(l.shape() == Shape{2, 6});
    bool differ = false;
    for (int v = 0; v < 6; ++v) differ = differ || l.at({0, v}) != l.at({1, v});
    CHECK(differ);
}

TEST_CASE("relabeling items permutes the logits") {
    Rng rng(2);
    SrsModel<double> a(tiny(4), rng);
    Rng rng2(2);
    SrsModel<double> b(tiny(4), rng2);
    const std::int64_t perm[] = {0, 3, 1, 4, 2};  // new id of old id
    auto& ta = a.item_table().mutable_value();
    auto& tb = b.item_table().mutable_value();
    for (int v = 0; v <= 4; ++v)
        for (int j = 0; j < 16; ++j) tb.at({perm[v], j}) = ta.at({v, j});
    ItemSeq h{2, 4, 1};
    ItemSeq hp;
    for (auto v : h) hp.push_back(perm[v]);
    auto la = a.score_next({h}).value(), lb = b.score_next({hp}).value();
    for (int v = 1; v <= 4; ++v) CHECK(lb[perm[v]] == doctest::Approx(la[v]).epsilon(1e-12));
}

TEST_CASE("hidden states are causal") {
    Rng rng(3);
    SrsModel<double> m(tiny(5), rng);
    auto x = testing::random_tensor({1, 6, 16}, rng);
    auto h = m.encode_embeddings(constant(x)).value();
    auto x2 = x;
    for (int j = 0; j < 16; ++j) x2.at({0, 4, j}) += 1.0;
    auto h2 = m.encode_embeddings(constant(x2)).value();
    for (int p = 0; p < 6; ++p)
        for (int j = 0; j < 16; ++j) {
            if (p < 4) CHECK(h.at({0, p, j}) == h2.at({0, p, j}));
        }
    bool changed = false;
    for (int j = 0; j < 16; ++j) changed = changed || h.at({0, 4, j}) != h2.at({0, 4, j});
    CHECK(changed);
}

TEST_CASE("padding never influences real positions") {
    Rng rng(4);
    SrsModel<double> m(tiny(5), rng);
    // The same history alone and batched with a longer one (hence padded).
    auto alone = m.score_next({{2, 3}}).value();
    auto batched = m.score_next({{2, 3}, {1, 2, 3, 4, 5}}).value();
    for (int v = 0; v < 6; ++v) CHECK(batched[v] == doctest::Approx(alone[v]).epsilon(1e-12));
}

TEST_CASE("embedding input path equals the item-id path") {
    Rng rng(5);
    SrsModel<double> m(tiny(5), rng);
    ItemSeq h{4, 1, 5};
    Tensor<double> e({1, 3, 16});
    for (int p = 0; p < 3; ++p)
        for (int j = 0; j < 16; ++j) e.at({0, p, j}) = m.item_table().value().at({h[p], j});
    CHECK(m.score_next_embeddings(constant(e)).value() == m.score_next({h}).value());
}

TEST_CASE("over-length input keeps the most recent max_len items") {
    Rng rng(6);
    SrsModel<double> m(tiny(6, 4), rng);
    auto a = m.score_next({{1, 2, 3, 4, 5, 6}}).value();
    auto b = m.score_next({{3, 4, 5, 6}}).value();
    CHECK(a == b);
}

TEST_CASE("candidate scores are the matching logits") {
    Rng rng(7);
    SrsModel<double> m(tiny(6), rng);
    auto l = m.score_next({{1, 2}}).value();
    auto s = m.score_candidates({{1, 2}}, {{5, 3}});
    CHECK(s[0][0] == doctest::Approx(l[5]).epsilon(1e-12));
    CHECK(s[0][1] == doctest::Approx(l[3]).epsilon(1e-12));
}

TEST_CASE("gradients match finite differences") {
    Rng rng(8);
    auto cfg = tiny(6);
    SrsModel<double> m(cfg, rng);
    auto probe = constant(testing::random_tensor({2, 7}, rng));
    auto loss = [&] { return sum(mul(m.score_next({{1, 2, 3}, {4, 5}}), probe)); };
    std::vector<Var<double>> leaves;
    for (auto& [n, v] : m.params().entries()) leaves.push_back(v);
    CHECK(testing::check_gradients(loss, leaves, 96, rng).max_rel_error < 1e-3);
}

TEST_CASE("negative sampling avoids the target and the history") {
    Rng rng(9);
    ItemSeq hist{2, 3, 5, 7};
    for (int i = 0; i < 2000; ++i) {
        auto v = sample_negative(hist, 4, 8, rng);
        CHECK(v >= 1);
        CHECK(v <= 8);
        CHECK(v != 4);
        CHECK_FALSE(std::binary_search(hist.begin(), hist.end(), v));
    }
    // Full coverage falls back to any non-target item.
    ItemSeq all{1, 2, 3};
    for (int i = 0; i < 100; ++i) CHECK(sample_negative(all, 2, 3, rng) != 2);
    CHECK(sample_negative({}, 1, 1, rng) == 0);
}

TEST_CASE("alternating data is learned to low loss deterministically") {
    auto split = alternating();
    SrsTrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 16;
    tc.learning_rate = 5e-3;
    Rng r1(10), r2(10);
    SrsModel<float> a(tiny(2), r1), b(tiny(2), r2);
    auto la = train(a, split, tc);
    auto lb = train(b, split, tc);
    CHECK(la.epoch_loss == lb.epoch_loss);
    CHECK(la.epoch_loss.back() < 0.1);
    CHECK(la.epoch_loss.front() > la.epoch_loss.back());
}

TEST_CASE("reverse generation continues the alternation") {
    auto split = alternating();
    SrsTrainConfig tc;
    tc.epochs = 150;
    tc.batch_size = 16;
    tc.learning_rate = 5e-3;
    Rng rng(11);
    SrsModel<float> rev(tiny(2), rng);
    train_reverse(rev, split, tc);
    CHECK(generate_preorder(rev, {{1, 2, 1}}, 0) == std::vector<ItemSeq>{ItemSeq{}});
    auto g = generate_preorder(rev, {{1, 2, 1}, {2, 1, 2, 1}}, 4);
    CHECK(g[0] == ItemSeq{1, 2, 1, 2});
    CHECK(g[1] == ItemSeq{2, 1, 2, 1});
    CHECK(generate_preorder(rev, {{1, 2, 1}}, 4)[0] == g[0]);
}

TEST_CASE("reversing a dataset twice is the identity") {
    auto ds = make_synthetic(SynthConfig{});
    auto twice = ds;
    for (auto& [u, s] : twice.users) std::reverse(s.begin(), s.end());
    for (auto& [u, s] : twice.users) std::reverse(s.begin(), s.end());
    CHECK(twice == ds);
}

TEST_CASE("trained models beat popularity and recover the reversed chain") {
    SynthConfig sc;
    auto ds = make_synthetic(sc);
    auto split = leave_one_out_split(ds);
    auto cfg = tiny(ds.num_items, 50);
    cfg.dropout = 0.2;
    SrsTrainConfig tc;
    tc.epochs = 60;
    tc.batch_size = 64;
    tc.learning_rate = 5e-3;
    Rng rng(12);
    SrsModel<float> fwd(cfg, rng);
    train(fwd, split, tc);

    // Popularity over training items; HR@10 over the full catalogue for both.
    std::map<std::int64_t, int> pop;
    for (auto& [u, s] : split.train)
        for (auto v : s) ++pop[v];
    std::vector<double> pop_row(static_cast<std::size_t>(ds.num_items + 1), 0.0);
    for (auto& [v, c] : pop) pop_row[static_cast<std::size_t>(v)] = c;
    pop_row[0] = -1e9;
    int hit_model = 0, hit_pop = 0;
    std::vector<ItemSeq> hist;
    ItemSeq tgt;
    for (auto& [u, s] : split.train) {
        hist.push_back(split.test_history(u));
        tgt.push_back(split.test_target.at(u));
    }
    auto logits = fwd.score_next(hist).value();
    const auto width = ds.num_items + 1;
    for (std::size_t i = 0; i < hist.size(); ++i) {
        std::vector<double> row(logits.ptr() + i * width, logits.ptr() + (i + 1) * width);
        row[0] = -1e9;
        hit_model += rank_of(row, static_cast<std::size_t>(tgt[i])) <= 10;
        hit_pop += rank_of(pop_row, static_cast<std::size_t>(tgt[i])) <= 10;
    }
    CHECK(hit_model > hit_pop);

    // Reverse model: after each reversed history, the top-1 prediction should
    // be the most likely predecessor of the earliest item (raw token a - 1).
    Rng rng2(13);
    SrsModel<float> rev(cfg, rng2);
    train_reverse(rev, split, tc);
    std::map<std::string, std::int64_t> enc;
    for (std::size_t i = 0; i < ds.item_vocab.size(); ++i) enc[ds.item_vocab[i]] = static_cast<std::int64_t>(i + 1);
    int contexts = 0, correct = 0;
    std::vector<ItemSeq> reversed;
    for (auto& [u, s] : split.train) {
        ItemSeq r = split.test_history(u);
        std::reverse(r.begin(), r.end());
        reversed.push_back(r);
    }
    auto rl = rev.score_next(reversed).value();
    for (std::size_t i = 0; i < reversed.size(); ++i) {
        const long raw = std::stol(ds.item_vocab[static_cast<std::size_t>(reversed[i].back() - 1)]);
        const auto prev_raw = std::to_string(raw == 1 ? sc.items : raw - 1);
        if (!enc.count(prev_raw)) continue;
        ++contexts;
        std::vector<double> row(rl.ptr() + i * width, rl.ptr() + (i + 1) * width);
        if (argmax_item(row.data(), ds.num_items) == enc[prev_raw]) ++correct;
    }
    REQUIRE(contexts > 0);
    CHECK(static_cast<double>(correct) / contexts >= 0.6);
}
