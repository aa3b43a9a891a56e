#include "diffuasr/schedule.hpp"

#include <cmath>

#include "diffuasr/error.hpp"
#include "doctest.h"

using namespace diffuasr;

TEST_CASE("linear T=4 schedule constants") {
    auto s = make_schedule(ScheduleFamily::kLinear, 4, 0.1, 0.4);
    const double beta[] = {0.1, 0.2, 0.3, 0.4};
    // Cumulative products by hand: 0.9, 0.9·0.8, ·0.7, ·0.6.
    const double abar[] = {0.9, 0.72, 0.504, 0.3024};
    for (int t = 1; t <= 4; ++t) {
        CHECK(std::abs(s.beta_at(t) - beta[t - 1]) < 1e-12);
        CHECK(std::abs(s.alpha_bar_at(t) - abar[t - 1]) < 1e-12);
    }
    CHECK(std::abs(sigma2_at(s, 2) - 0.1 / 0.28 * 0.2) < 1e-12);
    CHECK(std::abs(sigma2_at(s, 2) - 0.0714286) < 1e-6);
    CHECK(sigma2_at(s, 1) == 0.0);
}

TEST_CASE("T=1 gives alpha_bar = 1 - beta for every family") {
    for (auto f : {ScheduleFamily::kLinear, ScheduleFamily::kSqrt, ScheduleFamily::kCosine, ScheduleFamily::kSigmoid}) {
        auto s = make_schedule(f, 1, 1e-4, 0.02);
        CHECK(s.alpha_bar_at(1) == doctest::Approx(1.0 - s.beta_at(1)).epsilon(1e-15));
    }
}

TEST_CASE("standard linear schedule noises almost completely") {
    auto s = make_schedule(ScheduleFamily::kLinear, 1000, 1e-4, 0.02);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    CHECK(s.alpha_bar_at(1000) < 1e-4);
    CHECK(std::abs(s.alpha_bar_at(1000) - prod) < 1e-12);
    const double oracle = s.beta_at(1000) * (1 - s.alpha_bar_at(999)) / (1 - s.alpha_bar_at(1000));
    CHECK(std::abs(sigma2_at(s, 1000) - oracle) < 1e-9);
}

TEST_CASE("all families satisfy the schedule invariants") {
    for (auto f : {ScheduleFamily::kLinear, ScheduleFamily::kSqrt, ScheduleFamily::kCosine, ScheduleFamily::kSigmoid}) {
        CAPTURE(to_string(f));
        auto s = make_schedule(f, 200, 1e-4, 0.02);
        double prod = 1.0;
        for (int t = 1; t <= 200; ++t) {
            CHECK(s.beta_at(t) > 0.0);
            CHECK(s.beta_at(t) < 1.0);
            CHECK(std::abs(s.alpha_at(t) - (1.0 - s.beta_at(t))) < 1e-12);
            prod *= s.alpha_at(t);
            CHECK(std::abs(s.alpha_bar_at(t) - prod) < 1e-12);
            if (t > 1) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
        }
        CHECK(s.alpha_bar_at(200) > 0.0);
        CHECK(parse_schedule_family(to_string(f)) == f);
    }
}

TEST_CASE("cosine and sqrt follow their closed forms before clipping") {
    const int T = 100;
    auto c = make_schedule(ScheduleFamily::kCosine, T);
    auto f = [&](double t) { return std::pow(std::cos((t / T + 0.008) / 1.008 * M_PI / 2), 2); };
    CHECK(c.alpha_bar_at(10) == doctest::Approx(f(10) / f(0)).epsilon(1e-12));
    auto q = make_schedule(ScheduleFamily::kSqrt, T);
    CHECK(q.alpha_bar_at(10) == doctest::Approx(1 - std::sqrt(10.0 / T + 1e-4)).epsilon(1e-9));
}

TEST_CASE("sigmoid schedule interpolates along a logistic curve") {
    auto s = make_schedule(ScheduleFamily::kSigmoid, 5, 0.1, 0.5);
    // x = -6, -3, 0, 3, 6
    const double xs[] = {-6, -3, 0, 3, 6};
    for (int t = 1; t <= 5; ++t)
        CHECK(s.beta_at(t) == doctest::Approx(0.1 + 0.4 / (1 + std::exp(-xs[t - 1]))).epsilon(1e-12));
}

TEST_CASE("invalid ranges are parameter errors") {
    CHECK_THROWS_AS(make_schedule(ScheduleFamily::kLinear, 0), ParameterError);
    CHECK_THROWS_AS(make_schedule(ScheduleFamily::kLinear, 10, 0.0, 0.02), ParameterError);
    CHECK_THROWS_AS(make_schedule(ScheduleFamily::kLinear, 10, 0.03, 0.02), ParameterError);
    CHECK_THROWS_AS(make_schedule(ScheduleFamily::kLinear, 10, 0.01, 1.0), ParameterError);
    auto s = make_schedule(ScheduleFamily::kLinear, 4, 0.1, 0.4);
    CHECK_THROWS_AS(sigma2_at(s, 0), ParameterError);
    CHECK_THROWS_AS(sigma2_at(s, 5), ParameterError);
    CHECK_THROWS(parse_schedule_family("bogus"));
}
