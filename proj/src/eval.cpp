#include "diffuasr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "diffuasr/error.hpp"

namespace diffuasr {

RankMetrics rank_metrics(std::int64_t rank, int k, std::int64_t candidates) {
    if (rank < 1 || rank > candidates)
        throw ParameterError("rank " + std::to_string(rank) + " outside 1.." + std::to_string(candidates));
    if (k < 1) throw ParameterError("cutoff K must be >= 1");
    if (rank > k) return {};
    return {1.0, 1.0 / std::log2(static_cast<double>(rank) + 1.0)};
}

std::int64_t pessimistic_rank(double target_score, const std::vector<double>& negative_scores) {
    std::int64_t rank = 1;
    for (double s : negative_scores)
        if (s >= target_score) ++rank;
    return rank;
}

ItemSeq sample_eval_negatives(const ItemSeq& sequence, std::int64_t num_items, int count, std::uint64_t seed,
                              std::int64_t user) {
    ItemSeq seen = sequence;
    std::sort(seen.begin(), seen.end());
    ItemSeq pool;
    for (std::int64_t v = 1; v <= num_items; ++v)
        if (!std::binary_search(seen.begin(), seen.end(), v)) pool.push_back(v);
    Rng rng = Rng(seed).split(static_cast<std::uint64_t>(user));
    const auto take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(std::max(count, 0)));
    // Partial Fisher-Yates: the first `take` slots become the sample.
    for (std::size_t i = 0; i < take; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(pool.size()) - 1));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(take);
    return pool;
}

template <typename T>
Scorer make_scorer(const SrsModel<T>& model, int batch) {
    return [&model, batch](const std::vector<ItemSeq>& histories, const std::vector<ItemSeq>& candidates) {
        std::vector<std::vector<double>> out;
        for (std::size_t start = 0; start < histories.size(); start += static_cast<std::size_t>(batch)) {
            const auto stop = std::min(histories.size(), start + static_cast<std::size_t>(batch));
            std::vector<ItemSeq> h(histories.begin() + static_cast<std::ptrdiff_t>(start),
                                   histories.begin() + static_cast<std::ptrdiff_t>(stop));
            std::vector<ItemSeq> c(candidates.begin() + static_cast<std::ptrdiff_t>(start),
                                   candidates.begin() + static_cast<std::ptrdiff_t>(stop));
            auto s = model.score_candidates(h, c);
            for (auto& row : s) out.push_back(std::move(row));
        }
        return out;
    };
}

template Scorer make_scorer<float>(const SrsModel<float>&, int);
template Scorer make_scorer<double>(const SrsModel<double>&, int);

nlohmann::json EvalReport::to_json() const {
    auto metrics = [this](const GroupMetrics& m) {
        return nlohmann::json{{"hr@" + std::to_string(k), m.hr}, {"ndcg@" + std::to_string(k), m.ndcg}, {"users", m.users}};
    };
    nlohmann::json j{{"k", k}, {"overall", metrics(overall)}, {"seeds", seeds}, {"short_pool_users", short_pool_users}};
    for (const auto& [g, m] : groups) j["groups"][to_string(g)] = metrics(m);
    return j;
}

EvalReport evaluate(const Scorer& scorer, const SplitDataset& split, const InteractionDataset& raw,
                    const EvalOptions& options) {
    if (options.negatives < 1) throw ParameterError("need at least one evaluation negative");
    EvalReport report;
    report.k = options.k;
    report.seeds = {options.seed};
    for (auto g : {UserGroup::kShort, UserGroup::kMedium, UserGroup::kLong}) report.groups[g] = {};

    std::vector<std::int64_t> users;
    std::vector<ItemSeq> histories, candidates;
    for (const auto& [u, train] : split.train) {
        auto it = raw.users.find(u);
        if (it == raw.users.end()) throw ParameterError("user " + std::to_string(u) + " missing from the raw dataset");
        const bool test = options.target == EvalTarget::kTest;
        ItemSeq history = test ? split.test_history(u) : train;
        if (history.empty()) continue;
        const auto target = test ? split.test_target.at(u) : split.valid_target.at(u);
        ItemSeq cand{target};
        const auto neg = sample_eval_negatives(it->second, raw.num_items, options.negatives, options.seed, u);
        if (static_cast<int>(neg.size()) < options.negatives) ++report.short_pool_users;
        cand.insert(cand.end(), neg.begin(), neg.end());
        users.push_back(u);
        histories.push_back(std::move(history));
        candidates.push_back(std::move(cand));
    }
    if (users.empty()) throw EmptyDatasetError("no user to evaluate");
    const auto scores = scorer(histories, candidates);
    if (scores.size() != users.size()) throw ShapeError("scorer returned the wrong number of rows");

    for (std::size_t i = 0; i < users.size(); ++i) {
        const auto& s = scores[i];
        if (s.size() != candidates[i].size()) throw ShapeError("scorer returned the wrong number of scores");
        const std::vector<double> neg(s.begin() + 1, s.end());
        UserResult r;
        r.user = users[i];
        r.group = group_for_length(static_cast<std::int64_t>(raw.users.at(users[i]).size()));
        r.rank = pessimistic_rank(s[0], neg);
        r.candidates = static_cast<std::int64_t>(s.size());
        const auto m = rank_metrics(r.rank, options.k, r.candidates);
        for (GroupMetrics* g : {&report.overall, &report.groups[r.group]}) {
            g->hr += m.hr;
            g->ndcg += m.ndcg;
            ++g->users;
        }
        report.per_user.push_back(r);
    }
    for (GroupMetrics* g : {&report.overall, &report.groups[UserGroup::kShort], &report.groups[UserGroup::kMedium],
                            &report.groups[UserGroup::kLong]})
        if (g->users > 0) {
            g->hr /= static_cast<double>(g->users);
            g->ndcg /= static_cast<double>(g->users);
        }
    return report;
}

EvalReport average_reports(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ParameterError("average_reports: no reports");
    EvalReport out;
    out.k = reports.front().k;
    out.overall.users = reports.front().overall.users;
    for (const auto& [g, m] : reports.front().groups) out.groups[g].users = m.users;
    const auto n = static_cast<double>(reports.size());
    for (const auto& r : reports) {
        out.overall.hr += r.overall.hr / n;
        out.overall.ndcg += r.overall.ndcg / n;
        for (const auto& [g, m] : r.groups) {
            out.groups[g].hr += m.hr / n;
            out.groups[g].ndcg += m.ndcg / n;
        }
        out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
        out.short_pool_users = std::max(out.short_pool_users, r.short_pool_users);
    }
    return out;
}

namespace {

struct Column {
    std::string name;
    std::function<double(const EvalReport&)> get;
};

std::vector<Column> columns(int k) {
    const std::string ks = std::to_string(k);
    std::vector<Column> cols{{"hr@" + ks, [](const EvalReport& r) { return r.overall.hr; }},
                             {"ndcg@" + ks, [](const EvalReport& r) { return r.overall.ndcg; }}};
    for (auto g : {UserGroup::kShort, UserGroup::kMedium, UserGroup::kLong}) {
        const std::string p = std::string(to_string(g)) + "_";
        cols.push_back({p + "hr@" + ks, [g](const EvalReport& r) { return r.groups.count(g) ? r.groups.at(g).hr : 0.0; }});
        cols.push_back({p + "ndcg@" + ks, [g](const EvalReport& r) { return r.groups.count(g) ? r.groups.at(g).ndcg : 0.0; }});
    }
    return cols;
}

}  // namespace

std::string compare_table(const std::map<std::string, EvalReport>& reports) {
    if (reports.empty()) return "";
    const auto cols = columns(reports.begin()->second.k);
    std::vector<double> best(cols.size(), -1.0);
    for (const auto& [name, r] : reports)
        for (std::size_t c = 0; c < cols.size(); ++c) best[c] = std::max(best[c], cols[c].get(r));
    std::size_t name_w = 8;
    for (const auto& [name, r] : reports) name_w = std::max(name_w, name.size());
    std::ostringstream os;
    char buf[64];
    os << std::string(name_w, ' ');
    for (const auto& c : cols) {
        std::snprintf(buf, sizeof buf, "  %14s", c.name.c_str());
        os << buf;
    }
    os << '\n';
    for (const auto& [name, r] : reports) {
        os << name << std::string(name_w - name.size(), ' ');
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const double v = cols[c].get(r);
            std::snprintf(buf, sizeof buf, "  %13.4f%c", v, v == best[c] ? '*' : ' ');
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

std::string compare_csv(const std::map<std::string, EvalReport>& reports) {
    if (reports.empty()) return "strategy\n";
    const auto cols = columns(reports.begin()->second.k);
    std::ostringstream os;
    os << "strategy";
    for (const auto& c : cols) os << ',' << c.name;
    os << '\n';
    char buf[40];
    for (const auto& [name, r] : reports) {
        os << name;
        for (const auto& c : cols) {
            std::snprintf(buf, sizeof buf, "%.17g", c.get(r));
            os << ',' << buf;
        }
        os << '\n';
    }
    return os.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "report.json", std::ios::binary);
        if (!out) throw IoError("cannot write " + (dir / "report.json").string());
        out << report.to_json().dump(2) << '\n';
    }
    std::ofstream out(dir / "report.csv", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "report.csv").string());
    out << compare_csv({{"model", report}});
}

}  // namespace diffuasr
