#pragma once

#include <vector>

#include "diffuasr/module.hpp"

namespace diffuasr::nn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are allocated lazily to match the
/// parameters seen on the first step.
template <typename T>
class Adam {
   public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// One update using each parameter's accumulated gradient; parameters
    /// without a gradient are treated as having a zero gradient.
    void step(ParameterSet<T>& params);

    /// Low-level form: params[i] -= update(grads[i]). Shapes must match.
    void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads);

    std::int64_t steps() const { return t_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }

   private:
    AdamConfig config_;
    std::vector<Tensor<T>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace diffuasr::nn
