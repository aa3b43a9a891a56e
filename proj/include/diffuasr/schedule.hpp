#pragma once

#include <string>
#include <vector>

namespace diffuasr {

enum class ScheduleFamily { kLinear, kSqrt, kCosine, kSigmoid };

std::string to_string(ScheduleFamily family);
ScheduleFamily parse_schedule_family(const std::string& name);

/// Variance schedule and derived constants, always in double precision.
/// Arrays are indexed by step t = 1..T at position t-1.
struct NoiseSchedule {
    ScheduleFamily family = ScheduleFamily::kLinear;
    int steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma2;

    double beta_at(int t) const { return beta[index(t)]; }
    double alpha_at(int t) const { return alpha[index(t)]; }
    double alpha_bar_at(int t) const { return alpha_bar[index(t)]; }
    /// ᾱ_{t-1} with the convention ᾱ_0 = 1.
    double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar[index(t - 1)]; }

   private:
    std::size_t index(int t) const;
};

/// Builds one schedule family.
///   linear:  β evenly spaced from beta_start to beta_end
///   sqrt:    ᾱ(t) = 1 - sqrt(t/T + 1e-4)
///   cosine:  ᾱ(t) = f(t)/f(0), f(t) = cos²(((t/T) + 0.008)/(1.008) · π/2)
///   sigmoid: β = beta_start + (beta_end - beta_start)·σ(x), x evenly spaced on [-6, 6]
/// For sqrt and cosine, β_t = min(1 - ᾱ(t)/ᾱ(t-1), 0.999) with ᾱ(0) := 1, and
/// the stored ᾱ is the running product of the clipped α.
NoiseSchedule make_schedule(ScheduleFamily family, int steps, double beta_start = 1e-4, double beta_end = 0.02);

/// σ_t² = (1 - ᾱ_{t-1}) / (1 - ᾱ_t) · β_t, with σ_1² = 0.
double sigma2_at(const NoiseSchedule& sched, int t);

}  // namespace diffuasr
