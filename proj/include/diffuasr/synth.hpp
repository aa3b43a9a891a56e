#pragma once

#include <cstdint>
#include <iosfwd>

#include "diffuasr/dataset.hpp"

namespace diffuasr {

/// Ring Markov chain over items 1..items: from i the next item is i+1, i+2
/// or i+3 (wrapping) with probability 0.6 / 0.3 / 0.1, the first item is
/// uniform, and lengths follow P(n) ∝ 1/(n - min_len + 1) on [min_len, max_len].
struct SynthConfig {
    int users = 500;
    int items = 50;
    int min_len = 3;
    int max_len = 40;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Raw interaction log: `user<TAB>item<TAB>timestamp`, user-major, with the
/// chain state as item token and the position as timestamp.
void write_synthetic_interactions(const SynthConfig& config, std::ostream& out);

/// The same log parsed with min_len = config.min_len.
InteractionDataset make_synthetic(const SynthConfig& config);

/// Chain successor probability P(next = b | current = a) in raw item tokens.
double synthetic_transition(const SynthConfig& config, std::int64_t a, std::int64_t b);

}  // namespace diffuasr
