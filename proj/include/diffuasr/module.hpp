#pragma once

#include <string>
#include <utility>
#include <vector>

#include "diffuasr/ops.hpp"

namespace diffuasr::nn {

/// Named, ordered collection of trainable leaves. Order is registration
/// order and is what the optimizer and checkpoint files follow.
template <typename T>
class ParameterSet {
   public:
    Var<T> add(std::string name, Tensor<T> init) {
        for (const auto& [n, v] : entries_)
            if (n == name) throw ParameterError("duplicate parameter name: " + name);
        entries_.emplace_back(std::move(name), parameter(std::move(init)));
        return entries_.back().second;
    }

    const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Var<T>>>& entries() { return entries_; }

    Var<T> get(const std::string& name) const {
        for (const auto& [n, v] : entries_)
            if (n == name) return v;
        throw ParameterError("unknown parameter: " + name);
    }

    void zero_grad() {
        for (auto& [n, v] : entries_) v.zero_grad();
    }

    void set_requires_grad(bool on) {
        for (auto& [n, v] : entries_) v.set_requires_grad(on);
    }

    std::int64_t count() const {
        std::int64_t total = 0;
        for (const auto& [n, v] : entries_) total += v.numel();
        return total;
    }

   private:
    std::vector<std::pair<std::string, Var<T>>> entries_;
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <typename T>
Tensor<T> uniform_init(Shape shape, std::int64_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    return t;
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
    return t;
}

}  // namespace diffuasr::nn
