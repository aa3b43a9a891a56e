#include "diffuasr/augment.hpp"

#include <filesystem>
#include <fstream>

#include "diffuasr/checkpoint.hpp"
#include "diffuasr/synth.hpp"
#include "doctest.h"

using namespace diffuasr;
namespace fs = std::filesystem;

namespace {
SUNetConfig small_net(std::int64_t items, int m) {
    SUNetConfig c;
    c.augment_length = m;
    c.embedding_dim = 16;
    c.num_items = static_cast<int>(items);
    c.base_width = 8;
    c.num_res_blocks = 1;
    return c;
}

DiffusionTrainConfig quick_train(int epochs) {
    DiffusionTrainConfig c;
    c.epochs = epochs;
    c.batch_size = 32;
    c.learning_rate = 2e-3;
    return c;
}

InteractionDataset toy() {
    InteractionDataset ds;
    ds.num_items = 9;
    ds.users[1] = {7, 7, 7};
    ds.users[2] = {1, 2, 3, 4, 5, 6, 8, 9};
    ds.users[3] = {2, 4, 6, 8, 1, 3};
    return ds;
}

fs::path fresh_dir(const char* name) {
    auto p = fs::temp_directory_path() / (std::string("diffuasr_aug_") + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}
}  // namespace

TEST_CASE("strategy names round-trip") {
    for (auto s : {AugmentStrategy::kNone, AugmentStrategy::kRandom, AugmentStrategy::kRandomSeq,
                   AugmentStrategy::kReverseGen, AugmentStrategy::kDiffusionCF, AugmentStrategy::kDiffusionCG})
        CHECK(parse_augment_strategy(to_string(s)) == s);
    CHECK(is_diffusion(AugmentStrategy::kDiffusionCG));
    CHECK_FALSE(is_diffusion(AugmentStrategy::kRandomSeq));
    CHECK_THROWS(parse_augment_strategy("mixup"));
}

TEST_CASE("strategy none leaves the dataset unchanged") {
    AugmentConfig cfg;
    cfg.strategy = AugmentStrategy::kNone;
    auto out = augment_dataset(toy(), {}, cfg);
    CHECK(out.aug.empty());
    CHECK(out.decoded() == toy());
}

TEST_CASE("random_seq over a single-item support repeats that item") {
    AugmentConfig cfg;
    cfg.strategy = AugmentStrategy::kRandomSeq;
    cfg.m = 5;
    auto out = augment_dataset(toy(), {}, cfg);
    CHECK(out.aug.at(1) == ItemSeq{7, 7, 7, 7, 7});
}

TEST_CASE("random_seq never draws the test item unless it occurs earlier") {
    AugmentConfig cfg;
    cfg.strategy = AugmentStrategy::kRandomSeq;
    cfg.m = 50;
    auto out = augment_dataset(toy(), {}, cfg);
    for (auto v : out.aug.at(2)) CHECK(v != 9);
    for (auto v : out.aug.at(3)) CHECK(v != 3);
    CHECK(conditioning_items({1, 2, 3}) == ItemSeq{1, 2});
}

TEST_CASE("every user grows by exactly M, prefixed") {
    auto ds = make_synthetic(SynthConfig{});
    for (auto s : {AugmentStrategy::kRandom, AugmentStrategy::kRandomSeq}) {
        AugmentConfig cfg;
        cfg.strategy = s;
        cfg.m = 4;
        auto dec = augment_dataset(ds, {}, cfg).decoded();
        CHECK(dec.num_users() == ds.num_users());
        for (auto& [u, seq] : ds.users) {
            const auto& a = dec.users.at(u);
            REQUIRE(a.size() == seq.size() + 4);
            CHECK(ItemSeq(a.begin() + 4, a.end()) == seq);
            for (auto v : a) CHECK((v >= 1 && v <= ds.num_items));
        }
    }
}

TEST_CASE("short_only augments only short users") {
    auto ds = make_synthetic(SynthConfig{});
    AugmentConfig cfg;
    cfg.strategy = AugmentStrategy::kRandom;
    cfg.short_only = true;
    auto out = augment_dataset(ds, {}, cfg);
    for (auto& [u, seq] : ds.users) CHECK((out.aug.count(u) == 1) == (seq.size() <= 5));
}

TEST_CASE("random output depends on the seed but not the schema") {
    auto ds = make_synthetic(SynthConfig{});
    AugmentConfig a;
    a.strategy = AugmentStrategy::kRandom;
    auto b = a;
    b.seed = 2;
    auto da = fresh_dir("seed1"), db = fresh_dir("seed2");
    emit(augment_dataset(ds, {}, a), da);
    emit(augment_dataset(ds, {}, b), db);
    CHECK(slurp(da / "sequences.tsv") != slurp(db / "sequences.tsv"));
    CHECK(slurp(da / "vocab.tsv") == slurp(db / "vocab.tsv"));
    for (const char* f : {"sequences.tsv", "vocab.tsv", "users.tsv", "manifest.json"}) {
        CHECK(fs::exists(da / f));
        CHECK(fs::exists(db / f));
    }
    // Same seed: same bytes.
    auto dc = fresh_dir("seed1b");
    emit(augment_dataset(ds, {}, a), dc);
    CHECK(slurp(da / "sequences.tsv") == slurp(dc / "sequences.tsv"));
    for (auto& d : {da, db, dc}) fs::remove_all(d);
}

TEST_CASE("emit then load round-trips") {
    auto ds = make_synthetic(SynthConfig{});
    AugmentConfig cfg;
    cfg.strategy = AugmentStrategy::kRandomSeq;
    auto aug = augment_dataset(ds, {}, cfg);
    auto dir = fresh_dir("emit");
    emit(aug, dir);
    CHECK(load_dataset(dir) == aug.decoded());
    auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["strategy"] == "random_seq");
    CHECK(manifest["config_hash"] == config_hash(manifest["config"]));
    fs::remove_all(dir);
}

TEST_CASE("config hash changes with every field") {
    AugmentConfig base;
    const auto h = config_hash(base.to_json());
    CHECK(config_hash(base.to_json()) == h);
    std::vector<AugmentConfig> variants(6, base);
    variants[0].strategy = AugmentStrategy::kRandom;
    variants[1].m = 7;
    variants[2].gamma = 0.5;
    variants[3].seed = 9;
    variants[4].short_only = true;
    variants[5].sample_batch = 64;
    for (const auto& v : variants) CHECK(config_hash(v.to_json()) != h);
}

TEST_CASE("model-based strategies need their models") {
    AugmentConfig cfg;
    cfg.strategy = AugmentStrategy::kReverseGen;
    CHECK_THROWS_AS(augment_dataset(toy(), {}, cfg), ParameterError);
    cfg.strategy = AugmentStrategy::kDiffusionCF;
    CHECK_THROWS_AS(augment_dataset(toy(), {}, cfg), ParameterError);
    cfg.m = 0;
    cfg.strategy = AugmentStrategy::kRandom;
    CHECK_THROWS_AS(augment_dataset(toy(), {}, cfg), ParameterError);
}

TEST_CASE("augmentor training: boundary error and early loss decrease") {
    auto ds = make_synthetic(SynthConfig{});
    auto sched = make_schedule(ScheduleFamily::kLinear, 100);
    CHECK_THROWS_AS(train_augmentor(ds, small_net(ds.num_items, 40), sched, quick_train(1)), EmptyDatasetError);

    auto trained = train_augmentor(ds, small_net(ds.num_items, 6), sched, quick_train(5));
    REQUIRE(trained.epoch_loss.size() == 5);
    for (std::size_t e = 1; e < 5; ++e) CHECK(trained.epoch_loss[e] < trained.epoch_loss[e - 1]);

    // Checkpoint reload gives the identical loss on a fixed batch.
    const auto path = fs::temp_directory_path() / "diffuasr_aug_ckpt.bin";
    nn::save_checkpoint(path, trained.net->params(), trained.net->config().to_json());
    Rng other(99);
    SUNet<float> reloaded(small_net(ds.num_items, 6), other);
    nn::load_checkpoint(path, reloaded.params());
    std::vector<ItemSeq> targets{{1, 2, 3, 4, 5, 6}}, raw{{7, 8}};
    Rng r1(5), r2(5);
    DiffusionLossOptions opt;
    opt.train = false;
    CHECK(training_loss(*trained.net, targets, raw, sched, r1, opt).item() ==
          training_loss(reloaded, targets, raw, sched, r2, opt).item());
    fs::remove(path);
}

TEST_CASE("diffusion augmentation is deterministic and batch-size independent") {
    auto ds = make_synthetic(SynthConfig{});
    InteractionDataset few = ds;
    few.users.clear();
    for (auto& [u, s] : ds.users)
        if (few.users.size() < 12) few.users.emplace(u, s);
    auto sched = make_schedule(ScheduleFamily::kLinear, 20);
    auto trained = train_augmentor(ds, small_net(ds.num_items, 3), sched, quick_train(1));
    AugmentModels models;
    models.net = trained.net.get();
    models.schedule = &trained.schedule;
    AugmentConfig cfg;
    cfg.m = 3;
    cfg.sample_batch = 5;
    auto a = augment_dataset(few, models, cfg);
    cfg.sample_batch = 128;
    auto b = augment_dataset(few, models, cfg);
    CHECK(a.aug == b.aug);
    for (auto& [u, items] : a.aug) {
        CHECK(items.size() == 3);
        for (auto v : items) CHECK(v >= 1);
    }
    CHECK(a.manifest["T"] == 20);
    cfg.m = 4;
    CHECK_THROWS_AS(augment_dataset(few, models, cfg), ParameterError);
}
