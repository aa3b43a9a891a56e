#include "diffuasr/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support.hpp"

using namespace diffuasr;
using namespace diffuasr::nn;

namespace {
SUNetConfig tiny_net(int items = 6) {
    SUNetConfig c;
    c.augment_length = 2;
    c.embedding_dim = 16;
    c.num_items = items;
    c.base_width = 8;
    c.num_res_blocks = 1;
    return c;
}

SrsConfig tiny_srs(int items = 6) {
    SrsConfig c;
    c.num_items = items;
    c.dim = 16;
    c.layers = 1;
    c.max_len = 8;
    c.dropout = 0.0;
    return c;
}

// Schedule with hand-set constants at t = 2.
NoiseSchedule scalar_schedule() {
    NoiseSchedule s;
    s.steps = 2;
    s.beta = {0.1, 0.04};
    s.alpha = {0.9, 0.96};
    s.alpha_bar = {0.5 / 0.96, 0.5};
    s.sigma2 = {0.0, (1 - 0.5 / 0.96) / 0.5 * 0.04};
    return s;
}
}  // namespace

TEST_CASE("forward sample with zero noise scales x0") {
    auto s = make_schedule(ScheduleFamily::kLinear, 10, 0.01, 0.2);
    Rng rng(1);
    auto x0 = testing::random_tensor({2, 3}, rng);
    auto xt = forward_sample(x0, 4, Tensor<double>({2, 3}), s);
    for (int i = 0; i < 6; ++i) CHECK(xt[i] == doctest::Approx(std::sqrt(s.alpha_bar_at(4)) * x0[i]));
}

TEST_CASE("forward sample at alpha_bar 0.25 with unit inputs is 0.5 + sqrt(0.75)") {
    auto s = make_schedule(ScheduleFamily::kLinear, 1, 0.75, 0.75);
    CHECK(s.alpha_bar_at(1) == doctest::Approx(0.25));
    auto xt = forward_sample(Tensor<double>({4}, 1.0), 1, Tensor<double>({4}, 1.0), s);
    for (int i = 0; i < 4; ++i) CHECK(xt[i] == doctest::Approx(1.36603).epsilon(1e-5));
    CHECK_THROWS_AS(forward_sample(Tensor<double>({4}), 1, Tensor<double>({3}), s), ShapeError);
    CHECK_THROWS(forward_sample(Tensor<double>({4}), 2, Tensor<double>({4}), s));
}

TEST_CASE("row-wise forward sample applies each row's own step") {
    auto s = make_schedule(ScheduleFamily::kLinear, 10, 0.01, 0.2);
    Rng rng(2);
    auto x0 = testing::random_tensor({2, 3}, rng), eps = testing::random_tensor({2, 3}, rng);
    auto xt = forward_sample(x0, std::vector<int>{2, 9}, eps, s);
    auto r0 = forward_sample(Tensor<double>({3}, std::vector<double>(x0.data().begin(), x0.data().begin() + 3)), 2,
                             Tensor<double>({3}, std::vector<double>(eps.data().begin(), eps.data().begin() + 3)), s);
    for (int i = 0; i < 3; ++i) CHECK(xt[i] == r0[i]);
}

TEST_CASE("forward sample moments match the closed form") {
    auto s = make_schedule(ScheduleFamily::kLinear, 10, 0.05, 0.3);
    Rng rng(3);
    const int n = 20000, t = 6;
    Tensor<double> x0({1}, 1.5);
    double m = 0, m2 = 0;
    for (int i = 0; i < n; ++i) {
        auto x = forward_sample(x0, t, Tensor<double>({1}, rng.normal()), s)[0];
        m += x;
        m2 += x * x;
    }
    m /= n;
    const double var = m2 / n - m * m;
    const double ev = 1 - s.alpha_bar_at(t);
    CHECK(std::abs(m - std::sqrt(s.alpha_bar_at(t)) * 1.5) < 3 * std::sqrt(ev / n));
    CHECK(std::abs(var - ev) < 3 * ev * std::sqrt(2.0 / n));
}

TEST_CASE("denoising loss is zero for an oracle predictor and about one for a zero predictor") {
    auto s = make_schedule(ScheduleFamily::kLinear, 50);
    Rng rng(4);
    auto x0 = constant(testing::random_tensor({8, 2, 16}, rng));
    auto eps = testing::random_tensor({8, 2, 16}, rng);
    std::vector<int> steps(8);
    for (auto& t : steps) t = static_cast<int>(rng.uniform_int(1, 50));
    auto c = constant(Tensor<double>({8, 16}));
    NoisePredictor<double> oracle = [&](const Var<double>&, const std::vector<int>&, const Var<double>&) {
        return constant(eps);
    };
    CHECK(denoising_loss(oracle, x0, c, steps, eps, s).item() == 0.0);

    auto big = testing::random_tensor({2000, 2, 16}, rng);
    NoisePredictor<double> zero = [&](const Var<double>& x, const std::vector<int>&, const Var<double>&) {
        return constant(Tensor<double>(x.shape()));
    };
    std::vector<int> st(2000, 7);
    const double l = denoising_loss(zero, constant(Tensor<double>({2000, 2, 16})), constant(Tensor<double>({2000, 16})),
                                    st, big, s)
                         .item();
    // mean of 64000 squared standard normals: sd of the mean is sqrt(2/64000).
    CHECK(std::abs(l - 1.0) < 5 * std::sqrt(2.0 / 64000));
}

TEST_CASE("training loss is non-negative and trains E only through the condition when detached") {
    auto s = make_schedule(ScheduleFamily::kLinear, 20);
    Rng rng(5);
    SUNet<double> net(tiny_net(), rng);
    std::vector<ItemSeq> targets{{1, 2}, {3, 4}}, raw{{5}, {6, 1}};
    for (double p : {0.0, 1.0}) {
        DiffusionLossOptions opt;
        opt.p_uncond = p;
        net.params().zero_grad();
        auto loss = training_loss(net, targets, raw, s, rng, opt);
        CHECK(loss.item() >= 0.0);
        backward(loss);
        const auto& g = net.item_embedding().grad();
        auto row_norm = [&](int r) {
            double n = 0;
            for (int j = 0; j < 16; ++j) n += std::abs(g.at({r, j}));
            return n;
        };
        if (p == 0.0) {
            CHECK(row_norm(5) > 0);  // raw items feed the condition
            CHECK(row_norm(2) == 0);  // target-only item: detached
            CHECK(row_norm(0) == 0);
        } else {
            CHECK(row_norm(0) > 0);  // every row unconditional
            CHECK(row_norm(5) == 0);
        }
    }
    DiffusionLossOptions attached;
    attached.detach_targets = false;
    net.params().zero_grad();
    backward(training_loss(net, targets, raw, s, rng, attached));
    double n2 = 0;
    for (int j = 0; j < 16; ++j) n2 += std::abs(net.item_embedding().grad().at({2, j}));
    CHECK(n2 > 0);
}

TEST_CASE("classifier-free combination algebra") {
    Tensor<double> cond({1}, 1.0), uncond({1}, 0.5);
    CHECK(classifier_free_combine(cond, uncond, 1.0)[0] == 1.5);
    Rng rng(6);
    auto c = testing::random_tensor({3, 4}, rng), u = testing::random_tensor({3, 4}, rng);
    CHECK(classifier_free_combine(c, u, 0.0) == c);
    for (double g : {0.1, 1.0, 10.0, 100.0}) CHECK(classifier_free_combine(c, c, g) == c);
}

TEST_CASE("classifier-guide combination scales by sqrt(1 - alpha_bar)") {
    auto s = make_schedule(ScheduleFamily::kLinear, 10, 0.01, 0.2);
    Tensor<double> cond({2, 1}, {1.0, 2.0}), grad({2, 1}, {0.5, -1.0});
    auto e = classifier_guide_combine(cond, grad, {3, 8}, 2.0, s);
    CHECK(e[0] == doctest::Approx(1.0 - 2.0 * std::sqrt(1 - s.alpha_bar_at(3)) * 0.5));
    CHECK(e[1] == doctest::Approx(2.0 + 2.0 * std::sqrt(1 - s.alpha_bar_at(8))));
    CHECK(classifier_guide_combine(cond, grad, {3, 8}, 0.0, s) == cond);
}

TEST_CASE("guide_noise reductions at gamma 0") {
    auto s = make_schedule(ScheduleFamily::kLinear, 20);
    Rng rng(7);
    SUNet<double> net(tiny_net(), rng);
    SrsModel<double> clf(tiny_srs(), rng);
    auto x = testing::random_tensor({2, 2, 16}, rng);
    std::vector<ItemSeq> raw{{3, 4}, {5}};
    std::vector<int> steps{4, 11};
    auto plain = guide_noise(net, x, steps, raw, Guidance<double>{}, s);
    CHECK(plain == net.forward(constant(x), steps, net.condition(raw)).value());
    CHECK(guide_noise(net, x, steps, raw, Guidance<double>{GuidanceStrategy::kClassifierFree, 0.0}, s) == plain);
    CHECK(guide_noise(net, x, steps, raw, Guidance<double>{GuidanceStrategy::kClassifierGuide, 0.0, &clf}, s) == plain);
    CHECK(guide_noise(net, x, steps, raw, Guidance<double>{GuidanceStrategy::kClassifierGuide, 1.0, &clf}, s) != plain);
    CHECK_THROWS(guide_noise(net, x, steps, raw, Guidance<double>{GuidanceStrategy::kClassifierGuide, 1.0}, s));

    // Classifier-free at gamma 1 by hand: 2·ε(c) - ε(e_padding).
    auto cf = guide_noise(net, x, steps, raw, Guidance<double>{GuidanceStrategy::kClassifierFree, 1.0}, s);
    auto unc = net.forward(constant(x), steps, net.condition({{}, {}})).value();
    for (int i = 0; i < plain.numel(); ++i) CHECK(cf[i] == doctest::Approx(2 * plain[i] - unc[i]).epsilon(1e-12));
}

TEST_CASE("classifier log-likelihood gradient matches finite differences") {
    Rng rng(8);
    SrsModel<double> clf(tiny_srs(), rng);
    auto x = testing::random_tensor({2, 3, 16}, rng);
    ItemSeq targets{2, 5};
    std::vector<double> ll;
    auto g = classifier_log_likelihood_grad(clf, x, targets, &ll);
    auto total = [&](const Tensor<double>& xx) {
        std::vector<double> l;
        classifier_log_likelihood_grad(clf, xx, targets, &l);
        return l[0] + l[1];
    };
    double worst = 0;
    for (int i = 0; i < x.numel(); i += 5) {
        auto xp = x, xm = x;
        xp[i] += 1e-5;
        xm[i] -= 1e-5;
        const double fd = (total(xp) - total(xm)) / 2e-5;
        worst = std::max(worst, std::abs(g[i] - fd) / (std::abs(fd) + 1e-8));
    }
    CHECK(worst < 1e-4);
    // Embedding path agrees with the item-id path when x holds table rows.
    Tensor<double> rows({1, 2, 16});
    for (int j = 0; j < 16; ++j) {
        rows.at({0, 0, j}) = clf.item_table().value().at({3, j});
        rows.at({0, 1, j}) = clf.item_table().value().at({1, j});
    }
    std::vector<double> l1;
    classifier_log_likelihood_grad(clf, rows, ItemSeq{4}, &l1);
    auto l2 = classifier_log_likelihood(clf, {{3, 1}}, ItemSeq{4});
    CHECK(l1[0] == doctest::Approx(l2[0]).epsilon(1e-12));
    CHECK(l2[0] < 0.0);
}

TEST_CASE("reverse step formula") {
    auto s = scalar_schedule();
    Tensor<double> x({1}, 1.0), e({1}, 0.2), z({1}, 0.0);
    auto out = reverse_step(x, {2}, e, z, s);
    CHECK(std::abs(out[0] - 1.00900) < 1e-4);
    CHECK(out[0] == doctest::Approx((1 / std::sqrt(0.96)) * (1 - 0.04 / std::sqrt(0.5) * 0.2)).epsilon(1e-14));
    // zero sigma and zero noise estimate: x_t / sqrt(alpha_t)
    auto plain = reverse_step(x, {2}, Tensor<double>({1}), Tensor<double>({1}, 3.0), s, true);
    CHECK(plain[0] == doctest::Approx(1 / std::sqrt(0.96)).epsilon(1e-14));
    // t = 1 ignores zeta
    CHECK(reverse_step(x, {1}, e, Tensor<double>({1}, 5.0), s) == reverse_step(x, {1}, e, z, s));
    // t > 1 adds sigma_t · zeta
    auto noisy = reverse_step(x, {2}, e, Tensor<double>({1}, 1.0), s);
    CHECK(noisy[0] - out[0] == doctest::Approx(std::sqrt(s.sigma2[1])).epsilon(1e-12));
}

TEST_CASE("batched and per-row reverse steps agree bitwise") {
    auto s = make_schedule(ScheduleFamily::kLinear, 30);
    Rng rng(9);
    for (int trial = 0; trial < 2; ++trial) {
        auto x = testing::random_tensor({5, 2, 16}, rng), e = testing::random_tensor({5, 2, 16}, rng),
             z = testing::random_tensor({5, 2, 16}, rng);
        std::vector<int> steps{1, 2, 15, 29, 30};
        auto batched = reverse_step(x, steps, e, z, s);
        for (int r = 0; r < 5; ++r) {
            std::vector<double> row(32);
            reverse_step_row(x.ptr() + 32 * r, e.ptr() + 32 * r, z.ptr() + 32 * r, 32, steps[r], s, row.data());
            for (int j = 0; j < 32; ++j) CHECK(row[j] == batched[32 * r + j]);
        }
    }
}

TEST_CASE("sampling is deterministic and independent of batching") {
    auto s = make_schedule(ScheduleFamily::kLinear, 8);
    Rng rng(10);
    SUNet<float> net(tiny_net(), rng);
    std::vector<ItemSeq> raw{{1, 2}, {3}, {4, 5, 6}};
    auto streams = [&] {
        std::vector<Rng> v;
        for (int u = 0; u < 3; ++u) v.push_back(Rng(42).split(u));
        return v;
    };
    Guidance<float> g{GuidanceStrategy::kClassifierFree, 1.0};
    auto st = streams();
    auto all = sample(net, raw, g, s, st);
    CHECK(all.shape() == Shape{3, 2, 16});
    auto st2 = streams();
    CHECK(sample(net, raw, g, s, st2) == all);
    auto st3 = streams();
    std::vector<Rng> one{st3[1]};
    auto single = sample(net, {raw[1]}, g, s, one);
    for (int j = 0; j < 32; ++j) CHECK(single[j] == all[32 + j]);

    SampleOptions det;
    det.zero_sigma = true;
    auto a = streams(), b = streams();
    CHECK(sample(net, raw, g, s, a, det) == sample(net, raw, g, s, b, det));
}

TEST_CASE("rounding by cosine similarity") {
    Tensor<float> table({3, 2}, {0, 0, 0.6f, 0.8f, 1, 0});
    CHECK(round_to_items(Tensor<float>({1, 2}, {1, 0}), table) == ItemSeq{2});
    // Scale invariance with an orthogonal table.
    Tensor<double> ortho({4, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1});
    for (int v = 1; v <= 3; ++v) {
        Tensor<double> row({3});
        row[v - 1] = 5.0;
        CHECK(round_to_items(row, ortho) == ItemSeq{v});
    }
    // Ties go to the smallest id; padding only when allowed.
    Tensor<double> tied({3, 2}, {1, 0, 2, 0, 3, 0});
    CHECK(round_to_items(Tensor<double>({1, 2}, {1, 0}), tied) == ItemSeq{1});
    CHECK(round_to_items(Tensor<double>({1, 2}, {1, 0}), tied, false) == ItemSeq{0});
    // Zero-norm row falls back to the dot product and is counted.
    RoundingStats stats;
    CHECK(round_to_items(Tensor<double>({1, 2}), tied, true, &stats) == ItemSeq{1});
    CHECK(stats.zero_norm_rows == 1);
}

TEST_CASE("rounding matches a brute-force scan on random rows") {
    Rng rng(11);
    auto table = testing::random_tensor({51, 16}, rng);
    auto x = testing::random_tensor({100, 16}, rng);
    auto ids = round_to_items(x, table);
    for (int r = 0; r < 100; ++r) {
        int best = -1;
        double best_cos = -2;
        for (int v = 1; v <= 50; ++v) {
            double dot = 0, nx = 0, nv = 0;
            for (int j = 0; j < 16; ++j) {
                dot += x.at({r, j}) * table.at({v, j});
                nx += x.at({r, j}) * x.at({r, j});
                nv += table.at({v, j}) * table.at({v, j});
            }
            const double c = dot / std::sqrt(nx * nv);
            if (c > best_cos) best_cos = c, best = v;
        }
        CHECK(ids[r] == best);
    }
    // Rescaling any single table row by a positive factor changes nothing.
    auto scaled = table;
    for (int j = 0; j < 16; ++j) scaled.at({17, j}) *= 7.5;
    CHECK(round_to_items(x, scaled) == ids);
}

TEST_CASE("strategy names round-trip") {
    for (auto g : {GuidanceStrategy::kNone, GuidanceStrategy::kClassifierFree, GuidanceStrategy::kClassifierGuide})
        CHECK(parse_guidance_strategy(to_string(g)) == g);
    CHECK(parse_guidance_strategy("cf") == GuidanceStrategy::kClassifierFree);
    CHECK_THROWS(parse_guidance_strategy("xx"));
}
