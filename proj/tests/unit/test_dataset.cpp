#include "diffuasr/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "diffuasr/error.hpp"
#include "diffuasr/rng.hpp"
#include "diffuasr/synth.hpp"
#include "doctest.h"

using namespace diffuasr;
namespace fs = std::filesystem;

namespace {
InteractionDataset parse(const std::string& text, int min_len = 3) {
    std::istringstream in(text);
    return parse_interactions(in, min_len);
}

InteractionDataset with_lengths(const std::vector<int>& lengths) {
    InteractionDataset ds;
    std::int64_t next = 1;
    for (std::size_t u = 0; u < lengths.size(); ++u) {
        ItemSeq s;
        for (int i = 0; i < lengths[u]; ++i) s.push_back(next++);
        ds.users[static_cast<std::int64_t>(u + 1)] = s;
    }
    ds.num_items = next - 1;
    return ds;
}

fs::path fresh_dir(const char* name) {
    auto p = fs::temp_directory_path() / (std::string("diffuasr_ds_") + name);
    fs::remove_all(p);
    return p;
}
}  // namespace

TEST_CASE("users below min_len are dropped") {
    auto ds = parse(
        "a\t1\t1\na\t2\t2\n"
        "b\t1\t1\nb\t2\t2\nb\t3\t3\n"
        "c\t1\t1\nc\t2\t2\nc\t3\t3\nc\t4\t4\nc\t5\t5\nc\t6\t6\nc\t7\t7\n");
    REQUIRE(ds.num_users() == 2);
    std::multiset<std::size_t> lengths;
    for (auto& [u, s] : ds.users) lengths.insert(s.size());
    CHECK(lengths == std::multiset<std::size_t>{3, 7});
}

TEST_CASE("items are re-indexed densely in first-seen order") {
    auto ds = parse("u\t10\t1\nu\t500\t2\nu\t7\t3\n");
    CHECK(ds.num_items == 3);
    CHECK(ds.users.begin()->second == ItemSeq{1, 2, 3});
    CHECK(ds.item_vocab == std::vector<std::string>{"10", "500", "7"});
}

TEST_CASE("re-indexing skips items seen only in dropped users") {
    auto ds = parse("x\t99\t1\nu\t5\t1\nu\t6\t2\nu\t7\t3\n");
    CHECK(ds.num_items == 3);
    CHECK(ds.item_vocab == std::vector<std::string>{"5", "6", "7"});
}

TEST_CASE("sequences are ordered by timestamp with ties kept in line order") {
    auto ds = parse("u\ta\t5\nu\tb\t1\nu\tc\t5\nu\td\t2.5\n");
    const auto& s = ds.users.begin()->second;
    std::vector<std::string> raw;
    for (auto v : s) raw.push_back(ds.item_vocab[static_cast<std::size_t>(v - 1)]);
    CHECK(raw == std::vector<std::string>{"b", "d", "a", "c"});
}

TEST_CASE("malformed lines report their line number") {
    try {
        parse("u\t1\t1\nu\t2\nu\t3\t3\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse("u\t1\tnot-a-time\n"), ParseError);
    CHECK_THROWS_AS(parse("u\t1\t1\nu\t2\t2\n"), EmptyDatasetError);
    CHECK_THROWS_AS(load_interactions("/nonexistent/file.tsv"), IoError);
}

TEST_CASE("leave-one-out split") {
    InteractionDataset ds;
    ds.users[1] = {5, 9, 2, 7};
    ds.users[2] = {1, 2, 3};
    ds.num_items = 9;
    auto sp = leave_one_out_split(ds);
    CHECK(sp.train[1] == ItemSeq{5, 9});
    CHECK(sp.valid_target[1] == 2);
    CHECK(sp.test_target[1] == 7);
    CHECK(sp.train[2] == ItemSeq{1});
    CHECK(sp.valid_target[2] == 2);
    CHECK(sp.test_target[2] == 3);
    CHECK(sp.test_history(1) == ItemSeq{5, 9, 2});
}

TEST_CASE("split concatenation reconstructs 1000 random sequences") {
    Rng rng(1);
    InteractionDataset ds;
    ds.num_items = 30;
    for (int u = 1; u <= 1000; ++u) {
        ItemSeq s(static_cast<std::size_t>(rng.uniform_int(3, 25)));
        for (auto& v : s) v = rng.uniform_int(1, 30);
        ds.users[u] = s;
    }
    auto sp = leave_one_out_split(ds);
    for (auto& [u, s] : ds.users) {
        ItemSeq r = sp.train.at(u);
        r.push_back(sp.valid_target.at(u));
        r.push_back(sp.test_target.at(u));
        CHECK(r == s);
    }
}

TEST_CASE("diffusion training set membership") {
    auto ds = with_lengths({3, 5, 9});
    CHECK(build_diffusion_training_set(ds, 4, false).size() == 2);
    CHECK(build_diffusion_training_set(ds, 4, true).size() == 1);
    InteractionDataset one;
    one.users[1] = {1, 2, 3, 4, 5, 6};
    one.num_items = 6;
    auto pairs = build_diffusion_training_set(one, 4, false);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].target == ItemSeq{1, 2, 3, 4});
    CHECK(pairs[0].raw == ItemSeq{5, 6});
    auto excl = build_diffusion_training_set(one, 4, true);
    CHECK(excl[0].raw == ItemSeq{5});
    try {
        build_diffusion_training_set(ds, 9, false);
        FAIL("expected EmptyDatasetError");
    } catch (const EmptyDatasetError& e) {
        CHECK(std::string(e.what()).find("M = 9") != std::string::npos);
    }
}

TEST_CASE("excluding the test item keeps it out of every training pair") {
    auto ds = make_synthetic(SynthConfig{});
    for (const auto& p : build_diffusion_training_set(ds, 6, true)) {
        const auto& s = ds.users.at(p.user);
        CHECK(p.target.size() + p.raw.size() == s.size() - 1);
    }
}

TEST_CASE("group boundaries") {
    CHECK(group_for_length(3) == UserGroup::kShort);
    CHECK(group_for_length(5) == UserGroup::kShort);
    CHECK(group_for_length(6) == UserGroup::kMedium);
    CHECK(group_for_length(20) == UserGroup::kMedium);
    CHECK(group_for_length(21) == UserGroup::kLong);
    auto ds = with_lengths({3, 5, 6, 20, 21, 40});
    auto g = assign_groups(ds);
    CHECK(g.size() == 6);
    CHECK(g[2] == UserGroup::kShort);
    CHECK(g[3] == UserGroup::kMedium);
    CHECK(g[5] == UserGroup::kLong);
    CHECK(std::string(to_string(UserGroup::kMedium)) == "medium");
}

TEST_CASE("save and load round-trip bit-exactly") {
    auto ds = parse("alice\tx\t1\nalice\ty\t2\nalice\tz\t3\nbob\tz\t1\nbob\tq\t2\nbob\tx\t3\nbob\ty\t4\n");
    auto dir = fresh_dir("roundtrip");
    save_dataset(ds, dir);
    auto back = load_dataset(dir);
    CHECK(back == ds);
    save_dataset(back, dir / "again");
    std::ifstream a(dir / "sequences.tsv"), b(dir / "again" / "sequences.tsv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().find("1\t1,2,3\n") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("vocabulary decoding then encoding is the identity") {
    auto ds = make_synthetic(SynthConfig{});
    std::map<std::string, std::int64_t> enc;
    for (std::size_t i = 0; i < ds.item_vocab.size(); ++i) enc[ds.item_vocab[i]] = static_cast<std::int64_t>(i + 1);
    CHECK(enc.size() == ds.item_vocab.size());
    for (auto& [u, s] : ds.users)
        for (auto v : s) CHECK(enc.at(ds.item_vocab[static_cast<std::size_t>(v - 1)]) == v);
}

TEST_CASE("synthetic benchmark shape") {
    SynthConfig cfg;
    auto ds = make_synthetic(cfg);
    CHECK(ds.num_users() == 500);
    CHECK(ds.num_items <= 50);
    int short_users = 0;
    for (auto& [u, s] : ds.users) {
        CHECK(s.size() >= 3);
        CHECK(s.size() <= 40);
        short_users += s.size() <= 5;
    }
    // P(n <= 5) under 1/(n-2) on [3,40]: (1 + 1/2 + 1/3) / H_38 ≈ 0.43.
    CHECK(short_users > 150);
    CHECK(short_users < 280);
    CHECK(synthetic_transition(cfg, 1, 2) == 0.6);
    CHECK(synthetic_transition(cfg, 50, 2) == 0.3);
    CHECK(synthetic_transition(cfg, 1, 5) == 0.0);
    std::ostringstream a, b;
    write_synthetic_interactions(cfg, a);
    write_synthetic_interactions(cfg, b);
    CHECK(a.str() == b.str());
}
