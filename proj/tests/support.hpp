#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "diffuasr/ops.hpp"

namespace diffuasr::testing {

struct GradCheck {
    double max_rel_error = 0.0;
    int coordinates = 0;
    double max_abs_grad = 0.0;
};

/// Compares reverse-mode gradients of `loss()` against central differences on
/// `count` random coordinates drawn over all `leaves`. Error per coordinate is
/// |analytic - fd| / (|fd| + 1e-8).
inline GradCheck check_gradients(const std::function<nn::Var<double>()>& loss, std::vector<nn::Var<double>> leaves,
                                 int count, Rng& rng, double step = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    nn::backward(loss());
    std::vector<nn::Tensor<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.has_grad() ? l.grad() : nn::Tensor<double>(l.shape()));

    std::int64_t total = 0;
    for (const auto& l : leaves) total += l.numel();
    GradCheck out;
    for (int i = 0; i < count; ++i) {
        std::int64_t flat = rng.uniform_int(0, total - 1);
        std::size_t which = 0;
        while (flat >= leaves[which].numel()) flat -= leaves[which++].numel();
        double& x = leaves[which].mutable_value()[flat];
        const double saved = x;
        double fp, fm;
        {
            nn::NoGradGuard no_grad;
            x = saved + step;
            fp = loss().item();
            x = saved - step;
            fm = loss().item();
        }
        x = saved;
        const double fd = (fp - fm) / (2 * step);
        const double a = analytic[which][flat];
        out.max_rel_error = std::max(out.max_rel_error, std::abs(a - fd) / (std::abs(fd) + 1e-8));
        out.max_abs_grad = std::max(out.max_abs_grad, std::abs(a));
        ++out.coordinates;
    }
    return out;
}

inline nn::Tensor<double> random_tensor(nn::Shape shape, Rng& rng, double scale = 1.0) {
    nn::Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal() * scale;
    return t;
}

}  // namespace diffuasr::testing
