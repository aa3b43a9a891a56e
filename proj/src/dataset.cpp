#include "diffuasr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "diffuasr/error.hpp"

namespace diffuasr {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

std::int64_t parse_int(std::string_view s, std::size_t line, const char* what) {
    std::int64_t v = 0;
    const auto* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, v);
    if (s.empty() || res.ec != std::errc() || res.ptr != end)
        throw ParseError(std::string("bad ") + what + " '" + std::string(s) + "'", line);
    return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return in;
}

std::vector<std::string> read_vocab(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<std::pair<std::int64_t, std::string>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto text = trim(line);
        if (text.empty()) continue;
        const auto fields = split_tabs(text);
        if (fields.size() != 2) throw ParseError(path.string() + ": expected raw<TAB>dense", lineno);
        rows.emplace_back(parse_int(fields[1], lineno, "dense id"), std::string(fields[0]));
    }
    std::sort(rows.begin(), rows.end());
    std::vector<std::string> vocab;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].first != static_cast<std::int64_t>(i) + 1)
            throw ParseError(path.string() + ": dense ids are not 1..n", i + 1);
        vocab.push_back(std::move(rows[i].second));
    }
    return vocab;
}

void write_vocab(const std::vector<std::string>& vocab, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (std::size_t i = 0; i < vocab.size(); ++i) out << vocab[i] << '\t' << (i + 1) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::int64_t InteractionDataset::num_interactions() const {
    std::int64_t n = 0;
    for (const auto& [u, seq] : users) n += static_cast<std::int64_t>(seq.size());
    return n;
}

void InteractionDataset::check() const {
    for (const auto& [u, seq] : users) {
        if (seq.empty()) throw ParameterError("user " + std::to_string(u) + " has an empty sequence");
        for (auto v : seq)
            if (v < 1 || v > num_items)
                throw ParameterError("user " + std::to_string(u) + ": item " + std::to_string(v) + " outside 1.." +
                                     std::to_string(num_items));
    }
}

ItemSeq SplitDataset::test_history(std::int64_t user) const {
    ItemSeq h = train.at(user);
    h.push_back(valid_target.at(user));
    return h;
}

InteractionDataset parse_interactions(std::istream& in, int min_len) {
    struct Event {
        double time;
        std::size_t line;
        std::string item;
    };
    std::vector<std::string> user_order;
    std::unordered_map<std::string, std::vector<Event>> events;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto text = trim(line);
        if (text.empty()) continue;
        const auto fields = split_tabs(text);
        if (fields.size() != 3)
            throw ParseError("expected user<TAB>item<TAB>timestamp, got " + std::to_string(fields.size()) + " fields",
                             lineno);
        if (fields[0].empty() || fields[1].empty()) throw ParseError("empty user or item token", lineno);
        double ts = 0;
        const auto tf = trim(fields[2]);
        const auto res = std::from_chars(tf.data(), tf.data() + tf.size(), ts);
        if (tf.empty() || res.ec != std::errc() || res.ptr != tf.data() + tf.size())
            throw ParseError("bad timestamp '" + std::string(fields[2]) + "'", lineno);
        std::string user(fields[0]);
        auto [it, inserted] = events.try_emplace(user);
        if (inserted) user_order.push_back(user);
        it->second.push_back({ts, lineno, std::string(fields[1])});
    }

    InteractionDataset ds;
    std::vector<std::pair<std::string, std::vector<Event>*>> kept;
    for (const auto& user : user_order) {
        auto& ev = events[user];
        if (static_cast<int>(ev.size()) >= min_len) kept.emplace_back(user, &ev);
    }
    if (kept.empty())
        throw EmptyDatasetError("no user has at least " + std::to_string(min_len) + " interactions");

    // First-seen order over the surviving lines, in input order.
    std::vector<std::pair<std::size_t, const std::string*>> item_lines;
    for (const auto& [user, ev] : kept)
        for (const auto& e : *ev) item_lines.emplace_back(e.line, &e.item);
    std::sort(item_lines.begin(), item_lines.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::unordered_map<std::string, std::int64_t> item_id;
    for (const auto& [ln, item] : item_lines) {
        if (item_id.try_emplace(*item, static_cast<std::int64_t>(ds.item_vocab.size()) + 1).second)
            ds.item_vocab.push_back(*item);
    }
    ds.num_items = static_cast<std::int64_t>(ds.item_vocab.size());

    std::int64_t uid = 0;
    for (auto& [user, ev] : kept) {
        std::stable_sort(ev->begin(), ev->end(), [](const Event& a, const Event& b) { return a.time < b.time; });
        ItemSeq seq;
        seq.reserve(ev->size());
        for (const auto& e : *ev) seq.push_back(item_id.at(e.item));
        ds.users.emplace(++uid, std::move(seq));
        ds.user_vocab.push_back(user);
    }
    return ds;
}

InteractionDataset load_interactions(const std::filesystem::path& path, int min_len) {
    auto in = open_in(path);
    return parse_interactions(in, min_len);
}

SplitDataset leave_one_out_split(const InteractionDataset& ds) {
    SplitDataset split;
    split.num_items = ds.num_items;
    for (const auto& [u, seq] : ds.users) {
        if (seq.size() < 3)
            throw ParameterError("user " + std::to_string(u) + " has " + std::to_string(seq.size()) +
                                 " interactions; leave-one-out needs at least 3");
        const auto n = seq.size();
        split.train.emplace(u, ItemSeq(seq.begin(), seq.end() - 2));
        split.valid_target.emplace(u, seq[n - 2]);
        split.test_target.emplace(u, seq[n - 1]);
    }
    return split;
}

std::vector<DiffusionPair> build_diffusion_training_set(const InteractionDataset& ds, int m, bool exclude_test) {
    if (m < 1) throw ParameterError("augment length M must be >= 1, got " + std::to_string(m));
    std::vector<DiffusionPair> out;
    for (const auto& [u, seq] : ds.users) {
        const auto n = static_cast<std::int64_t>(seq.size()) - (exclude_test ? 1 : 0);
        if (n <= m) continue;
        DiffusionPair p;
        p.user = u;
        p.target.assign(seq.begin(), seq.begin() + m);
        p.raw.assign(seq.begin() + m, seq.begin() + n);
        out.push_back(std::move(p));
    }
    if (out.empty())
        throw EmptyDatasetError("no sequence is longer than M = " + std::to_string(m) +
                                (exclude_test ? " once the test item is removed" : ""));
    return out;
}

const char* to_string(UserGroup g) {
    switch (g) {
        case UserGroup::kShort: return "short";
        case UserGroup::kMedium: return "medium";
        case UserGroup::kLong: return "long";
    }
    return "?";
}

UserGroup group_for_length(std::int64_t n) {
    if (n <= 5) return UserGroup::kShort;
    if (n <= 20) return UserGroup::kMedium;
    return UserGroup::kLong;
}

std::map<std::int64_t, UserGroup> assign_groups(const InteractionDataset& ds) {
    std::map<std::int64_t, UserGroup> g;
    for (const auto& [u, seq] : ds.users) g.emplace(u, group_for_length(static_cast<std::int64_t>(seq.size())));
    return g;
}

void write_sequences(const InteractionDataset& ds, std::ostream& out) {
    for (const auto& [u, seq] : ds.users) {
        out << u << '\t';
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (i) out << ',';
            out << seq[i];
        }
        out << '\n';
    }
}

InteractionDataset read_sequences(std::istream& in) {
    InteractionDataset ds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto text = trim(line);
        if (text.empty()) continue;
        const auto fields = split_tabs(text);
        if (fields.size() != 2) throw ParseError("expected user<TAB>v1,v2,...", lineno);
        const auto user = parse_int(fields[0], lineno, "user id");
        ItemSeq seq;
        std::string_view rest = fields[1];
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto tok = rest.substr(0, comma);
            const auto v = parse_int(tok, lineno, "item id");
            if (v < 1) throw ParseError("item id must be >= 1", lineno);
            seq.push_back(v);
            ds.num_items = std::max(ds.num_items, v);
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (seq.empty()) throw ParseError("empty sequence", lineno);
        if (!ds.users.emplace(user, std::move(seq)).second)
            throw ParseError("duplicate user " + std::to_string(user), lineno);
    }
    return ds;
}

void save_dataset(const InteractionDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        auto out = open_out(dir / "sequences.tsv");
        write_sequences(ds, out);
        if (!out) throw IoError("write failed: " + (dir / "sequences.tsv").string());
    }
    std::vector<std::string> items = ds.item_vocab;
    if (items.empty())
        for (std::int64_t v = 1; v <= ds.num_items; ++v) items.push_back(std::to_string(v));
    write_vocab(items, dir / "vocab.tsv");
    std::vector<std::string> users = ds.user_vocab;
    if (users.empty())
        for (const auto& [u, seq] : ds.users) users.push_back(std::to_string(u));
    write_vocab(users, dir / "users.tsv");
}

InteractionDataset load_dataset(const std::filesystem::path& dir) {
    auto in = open_in(dir / "sequences.tsv");
    InteractionDataset ds = read_sequences(in);
    if (std::filesystem::exists(dir / "vocab.tsv")) {
        ds.item_vocab = read_vocab(dir / "vocab.tsv");
        const auto seen = ds.num_items;
        ds.num_items = static_cast<std::int64_t>(ds.item_vocab.size());
        if (seen > ds.num_items)
            throw ParseError((dir / "sequences.tsv").string() + ": item " + std::to_string(seen) +
                                 " is not in the vocabulary",
                             0);
    }
    if (std::filesystem::exists(dir / "users.tsv")) ds.user_vocab = read_vocab(dir / "users.tsv");
    if (ds.users.empty()) throw EmptyDatasetError("no sequences in " + (dir / "sequences.tsv").string());
    return ds;
}

}  // namespace diffuasr
