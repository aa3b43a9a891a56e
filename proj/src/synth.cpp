#include "diffuasr/synth.hpp"

#include <ostream>
#include <sstream>

#include "diffuasr/error.hpp"
#include "diffuasr/rng.hpp"

namespace diffuasr {

namespace {
constexpr double kStepProb[3] = {0.6, 0.3, 0.1};

std::int64_t wrap(std::int64_t v, int items) { return (v - 1) % items + 1; }
}  // namespace

void SynthConfig::validate() const {
    if (users < 1) throw ParameterError("synth: users must be >= 1");
    if (items < 4) throw ParameterError("synth: items must be >= 4 so the three successors are distinct");
    if (min_len < 1 || max_len < min_len) throw ParameterError("synth: need 1 <= min_len <= max_len");
}

void write_synthetic_interactions(const SynthConfig& config, std::ostream& out) {
    config.validate();
    std::vector<double> cdf;
    double total = 0;
    for (int n = config.min_len; n <= config.max_len; ++n) {
        total += 1.0 / (n - config.min_len + 1);
        cdf.push_back(total);
    }
    Rng root(config.seed);
    for (int u = 1; u <= config.users; ++u) {
        Rng rng = root.split(static_cast<std::uint64_t>(u));
        const double draw = rng.uniform() * total;
        int len = config.max_len;
        for (std::size_t i = 0; i < cdf.size(); ++i)
            if (draw < cdf[i]) {
                len = config.min_len + static_cast<int>(i);
                break;
            }
        std::int64_t item = rng.uniform_int(1, config.items);
        for (int pos = 0; pos < len; ++pos) {
            out << 'u' << u << '\t' << item << '\t' << pos << '\n';
            const double s = rng.uniform();
            const int step = s < kStepProb[0] ? 1 : (s < kStepProb[0] + kStepProb[1] ? 2 : 3);
            item = wrap(item + step, config.items);
        }
    }
}

InteractionDataset make_synthetic(const SynthConfig& config) {
    std::stringstream ss;
    write_synthetic_interactions(config, ss);
    return parse_interactions(ss, config.min_len);
}

double synthetic_transition(const SynthConfig& config, std::int64_t a, std::int64_t b) {
    for (int step = 1; step <= 3; ++step)
        if (wrap(a + step, config.items) == b) return kStepProb[step - 1];
    return 0.0;
}

}  // namespace diffuasr
