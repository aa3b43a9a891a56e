#include "diffuasr/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "diffuasr/error.hpp"

namespace diffuasr {

namespace {

constexpr double kMaxBeta = 0.999;

std::vector<double> betas_from_alpha_bar(int steps, double (*alpha_bar_fn)(double)) {
    std::vector<double> beta(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        // ᾱ_0 := 1, so the stored ᾱ_t equals alpha_bar_fn(t/T) until clipping kicks in.
        const double prev = i == 0 ? 1.0 : alpha_bar_fn(static_cast<double>(i) / steps);
        const double cur = alpha_bar_fn(static_cast<double>(i + 1) / steps);
        beta[static_cast<std::size_t>(i)] = std::min(1.0 - cur / prev, kMaxBeta);
    }
    return beta;
}

double cosine_f(double u) {
    constexpr double s = 0.008;
    const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
}

double cosine_alpha_bar(double u) { return cosine_f(u) / cosine_f(0.0); }

double sqrt_alpha_bar(double u) { return 1.0 - std::sqrt(u + 1e-4); }

}  // namespace

std::string to_string(ScheduleFamily family) {
    switch (family) {
        case ScheduleFamily::kLinear: return "linear";
        case ScheduleFamily::kSqrt: return "sqrt";
        case ScheduleFamily::kCosine: return "cosine";
        case ScheduleFamily::kSigmoid: return "sigmoid";
    }
    return "unknown";
}

ScheduleFamily parse_schedule_family(const std::string& name) {
    if (name == "linear") return ScheduleFamily::kLinear;
    if (name == "sqrt") return ScheduleFamily::kSqrt;
    if (name == "cosine") return ScheduleFamily::kCosine;
    if (name == "sigmoid") return ScheduleFamily::kSigmoid;
    throw ParameterError("unknown schedule family '" + name + "' (expected linear|sqrt|cosine|sigmoid)");
}

std::size_t NoiseSchedule::index(int t) const {
    if (t < 1 || t > steps)
        throw ParameterError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
    return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_schedule(ScheduleFamily family, int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ParameterError("schedule needs T >= 1, got " + std::to_string(steps));
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ParameterError("schedule needs 0 < beta_start <= beta_end < 1, got [" + std::to_string(beta_start) +
                             ", " + std::to_string(beta_end) + "]");
    NoiseSchedule s;
    s.family = family;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    const auto n = static_cast<std::size_t>(steps);
    switch (family) {
        case ScheduleFamily::kLinear:
            s.beta.resize(n);
            for (int i = 0; i < steps; ++i)
                s.beta[static_cast<std::size_t>(i)] =
                    steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
            break;
        case ScheduleFamily::kSigmoid:
            s.beta.resize(n);
            for (int i = 0; i < steps; ++i) {
                const double x = steps == 1 ? -6.0 : -6.0 + 12.0 * i / (steps - 1);
                s.beta[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) / (1.0 + std::exp(-x));
            }
            break;
        case ScheduleFamily::kCosine: s.beta = betas_from_alpha_bar(steps, cosine_alpha_bar); break;
        case ScheduleFamily::kSqrt: s.beta = betas_from_alpha_bar(steps, sqrt_alpha_bar); break;
    }
    s.alpha.resize(n);
    s.alpha_bar.resize(n);
    s.sigma2.resize(n);
    double prod = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(s.beta[i] > 0.0 && s.beta[i] < 1.0))
            throw ParameterError(to_string(family) + " schedule produced beta outside (0,1) at t=" +
                                 std::to_string(i + 1));
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    for (int t = 1; t <= steps; ++t) s.sigma2[static_cast<std::size_t>(t - 1)] = sigma2_at(s, t);
    return s;
}

double sigma2_at(const NoiseSchedule& sched, int t) {
    const double ab = sched.alpha_bar_at(t);
    return (1.0 - sched.alpha_bar_prev(t)) / (1.0 - ab) * sched.beta_at(t);
}

}  // namespace diffuasr
