#include "diffuasr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "diffuasr/augment.hpp"
#include "diffuasr/error.hpp"

namespace diffuasr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
    const std::string v = trim(text);
    N out{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError(key + ": expected a number, got '" + text + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
    const std::string v = trim(text);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + text + "'");
}

template <typename N>
std::vector<N> parse_number_list(const std::string& key, const std::string& text) {
    std::vector<N> out;
    for (const auto& item : split_list(text)) out.push_back(parse_number<N>(key, item));
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename F>
Setter field(F RunConfig::*member) {
    return [member](RunConfig& c, const std::string& key, const std::string& v) {
        if constexpr (std::is_same_v<F, std::string>) {
            c.*member = trim(v);
        } else if constexpr (std::is_same_v<F, bool>) {
            c.*member = parse_bool(key, v);
        } else if constexpr (std::is_same_v<F, std::vector<std::string>>) {
            c.*member = split_list(v);
        } else if constexpr (std::is_same_v<F, std::vector<int>>) {
            c.*member = parse_number_list<int>(key, v);
        } else if constexpr (std::is_same_v<F, std::vector<double>>) {
            c.*member = parse_number_list<double>(key, v);
        } else if constexpr (std::is_same_v<F, std::vector<std::uint64_t>>) {
            c.*member = parse_number_list<std::uint64_t>(key, v);
        } else {
            c.*member = parse_number<F>(key, v);
        }
    };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        {"input", field(&RunConfig::input)},
        {"out", field(&RunConfig::out)},
        {"min_len", field(&RunConfig::min_len)},
        {"seed", field(&RunConfig::seed)},
        {"seeds", field(&RunConfig::seeds)},
        {"strategy", field(&RunConfig::strategy)},
        {"m", field(&RunConfig::m)},
        {"gamma", field(&RunConfig::gamma)},
        {"short_only", field(&RunConfig::short_only)},
        {"sample_batch", field(&RunConfig::sample_batch)},
        {"schedule", field(&RunConfig::schedule)},
        {"steps", field(&RunConfig::steps)},
        {"beta_start", field(&RunConfig::beta_start)},
        {"beta_end", field(&RunConfig::beta_end)},
        {"dim", field(&RunConfig::dim)},
        {"levels", field(&RunConfig::levels)},
        {"channel_mult", field(&RunConfig::channel_mult)},
        {"base_width", field(&RunConfig::base_width)},
        {"num_res_blocks", field(&RunConfig::num_res_blocks)},
        {"net_dropout", field(&RunConfig::net_dropout)},
        {"diff_epochs", field(&RunConfig::diff_epochs)},
        {"diff_batch", field(&RunConfig::diff_batch)},
        {"diff_lr", field(&RunConfig::diff_lr)},
        {"p_uncond", field(&RunConfig::p_uncond)},
        {"detach_targets", field(&RunConfig::detach_targets)},
        {"exclude_test", field(&RunConfig::exclude_test)},
        {"srs_layers", field(&RunConfig::srs_layers)},
        {"srs_max_len", field(&RunConfig::srs_max_len)},
        {"srs_dropout", field(&RunConfig::srs_dropout)},
        {"srs_epochs", field(&RunConfig::srs_epochs)},
        {"srs_batch", field(&RunConfig::srs_batch)},
        {"srs_lr", field(&RunConfig::srs_lr)},
        {"srs_eval_every", field(&RunConfig::srs_eval_every)},
        {"srs_patience", field(&RunConfig::srs_patience)},
        {"srs_keep_best", field(&RunConfig::srs_keep_best)},
        {"negatives", field(&RunConfig::negatives)},
        {"k", field(&RunConfig::k)},
        {"sweep_m", field(&RunConfig::sweep_m)},
        {"sweep_gamma", field(&RunConfig::sweep_gamma)},
        {"sweep_schedule", field(&RunConfig::sweep_schedule)},
        {"sweep_strategies", field(&RunConfig::sweep_strategies)},
        {"synth_users", field(&RunConfig::synth_users)},
        {"synth_items", field(&RunConfig::synth_items)},
        {"synth_max_len", field(&RunConfig::synth_max_len)},
    };
    return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& table = setters();
    auto it = table.find(trim(key));
    if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
    it->second(*this, it->first, value);
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& [k, s] : setters()) out.push_back(k);
    return out;
}

double RunConfig::resolved_p_uncond() const {
    if (p_uncond >= 0.0) return p_uncond;
    return strategy == "diffusion_cf" ? 0.1 : 0.0;
}

std::vector<std::string> RunConfig::problems() const {
    std::vector<std::string> p;
    auto need = [&p](bool ok, const std::string& msg) {
        if (!ok) p.push_back(msg);
    };
    need(min_len >= 3, "min_len: must be >= 3 for the leave-one-out split");
    need(!seeds.empty(), "seeds: needs at least one seed");
    try {
        parse_augment_strategy(strategy);
    } catch (const std::exception& e) {
        p.push_back(std::string("strategy: ") + e.what());
    }
    for (const auto& s : sweep_strategies) try {
            parse_augment_strategy(s);
        } catch (const std::exception& e) {
            p.push_back(std::string("sweep_strategies: ") + e.what());
        }
    need(m >= 1, "m: augment length must be >= 1");
    for (int v : sweep_m) need(v >= 1, "sweep_m: every M must be >= 1");
    need(gamma >= 0.0, "gamma: must be >= 0");
    for (double g : sweep_gamma) need(g >= 0.0, "sweep_gamma: every gamma must be >= 0");
    need(sample_batch >= 1, "sample_batch: must be >= 1");
    try {
        parse_schedule_family(schedule);
    } catch (const std::exception& e) {
        p.push_back(std::string("schedule: ") + e.what());
    }
    for (const auto& s : sweep_schedule) try {
            parse_schedule_family(s);
        } catch (const std::exception& e) {
            p.push_back(std::string("sweep_schedule: ") + e.what());
        }
    need(steps >= 1, "steps: T must be >= 1");
    need(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
         "beta_start/beta_end: need 0 < beta_start <= beta_end < 1");
    SUNetConfig net;
    net.augment_length = std::max(m, 1);
    net.embedding_dim = dim;
    net.num_items = 1;
    net.levels = levels;
    net.channel_mult = channel_mult;
    net.base_width = base_width;
    net.num_res_blocks = num_res_blocks;
    net.dropout = net_dropout;
    try {
        net.validate();
    } catch (const std::exception& e) {
        p.push_back(std::string("dim/levels/channel_mult/base_width/num_res_blocks/net_dropout: ") + e.what());
    }
    need(diff_epochs >= 0, "diff_epochs: must be >= 0");
    need(diff_batch >= 1, "diff_batch: must be >= 1");
    need(diff_lr > 0.0, "diff_lr: must be > 0");
    need(p_uncond <= 1.0, "p_uncond: must be <= 1 (negative selects the default)");
    need(srs_layers >= 0, "srs_layers: must be >= 0");
    need(srs_max_len >= 1, "srs_max_len: must be >= 1");
    need(srs_dropout >= 0.0 && srs_dropout < 1.0, "srs_dropout: must be in [0, 1)");
    need(srs_epochs >= 0, "srs_epochs: must be >= 0");
    need(srs_batch >= 1, "srs_batch: must be >= 1");
    need(srs_lr > 0.0, "srs_lr: must be > 0");
    need(srs_eval_every >= 0, "srs_eval_every: must be >= 0");
    need(srs_patience >= 0, "srs_patience: must be >= 0");
    need(negatives >= 1, "negatives: must be >= 1");
    need(k >= 1, "k: must be >= 1");
    need(synth_users >= 1, "synth_users: must be >= 1");
    need(synth_items >= 4, "synth_items: must be >= 4");
    need(synth_max_len >= min_len, "synth_max_len: must be >= min_len");
    return p;
}

void RunConfig::validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ConfigError(msg);
}

nlohmann::json RunConfig::to_json() const {
    return {{"input", input},
            {"out", out},
            {"min_len", min_len},
            {"seed", seed},
            {"seeds", seeds},
            {"strategy", strategy},
            {"m", m},
            {"gamma", gamma},
            {"short_only", short_only},
            {"sample_batch", sample_batch},
            {"schedule", schedule},
            {"steps", steps},
            {"beta_start", beta_start},
            {"beta_end", beta_end},
            {"dim", dim},
            {"levels", levels},
            {"channel_mult", channel_mult},
            {"base_width", base_width},
            {"num_res_blocks", num_res_blocks},
            {"net_dropout", net_dropout},
            {"diff_epochs", diff_epochs},
            {"diff_batch", diff_batch},
            {"diff_lr", diff_lr},
            {"p_uncond", p_uncond},
            {"detach_targets", detach_targets},
            {"exclude_test", exclude_test},
            {"srs_layers", srs_layers},
            {"srs_max_len", srs_max_len},
            {"srs_dropout", srs_dropout},
            {"srs_epochs", srs_epochs},
            {"srs_batch", srs_batch},
            {"srs_lr", srs_lr},
            {"srs_eval_every", srs_eval_every},
            {"srs_patience", srs_patience},
            {"srs_keep_best", srs_keep_best},
            {"negatives", negatives},
            {"k", k},
            {"sweep_m", sweep_m},
            {"sweep_gamma", sweep_gamma},
            {"sweep_schedule", sweep_schedule},
            {"sweep_strategies", sweep_strategies},
            {"synth_users", synth_users},
            {"synth_items", synth_items},
            {"synth_max_len", synth_max_len}};
}

void parse_config_text(const std::string& text, RunConfig& config, const std::string& origin) {
    std::vector<std::string> errors;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back(origin + ":" + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        try {
            config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            errors.push_back(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
}

void load_config_file(const std::filesystem::path& path, RunConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    parse_config_text(ss.str(), config, path.string());
}

}  // namespace diffuasr
