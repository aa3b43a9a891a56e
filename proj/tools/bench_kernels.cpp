// Times the OpenMP kernels against the serial reference loops on shapes
// taken from the noise predictor and the recommender, and reports the
// largest absolute difference between the two.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "diffuasr/kernels.hpp"
#include "diffuasr/rng.hpp"

using namespace diffuasr;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

float max_diff(const std::vector<float>& a, const std::vector<float>& b) {
    float d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

int main() {
    Rng rng(7);
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-34s %12s %12s %8s %10s\n", "kernel", "reference ms", "parallel ms", "speedup", "max |diff|");

    struct GemmCase {
        const char* name;
        std::int64_t m, n, k;
    };
    for (const auto& c : {GemmCase{"gemm 256x256x256", 256, 256, 256}, GemmCase{"gemm 4096x64x64 (srs ffn)", 4096, 64, 64},
                          GemmCase{"gemm 32x4096x288 (conv)", 32, 4096, 288}}) {
        const auto a = random_vec(static_cast<std::size_t>(c.m * c.k), rng);
        const auto b = random_vec(static_cast<std::size_t>(c.k * c.n), rng);
        std::vector<float> c_ref(static_cast<std::size_t>(c.m * c.n)), c_par(c_ref.size());
        const double tr = time_ms([&] { kernels::reference::gemm(false, false, c.m, c.n, c.k, a.data(), b.data(), c_ref.data(), false); }, 3);
        const double tp = time_ms([&] { kernels::gemm(false, false, c.m, c.n, c.k, a.data(), b.data(), c_par.data(), false); }, 3);
        std::printf("%-34s %12.3f %12.3f %8.2f %10.2e\n", c.name, tr, tp, tr / tp, max_diff(c_ref, c_par));
    }

    struct ConvCase {
        const char* name;
        kernels::Conv2dGeometry g;
    };
    for (const auto& c : {ConvCase{"conv 128x16->16 4x4 (d=16)", {128, 16, 4, 4, 16, 3, 1, 1}},
                          ConvCase{"conv 128x32->32 8x8 (d=64)", {128, 32, 8, 8, 32, 3, 1, 1}},
                          ConvCase{"conv 128x32->32 8x8 stride 2", {128, 32, 8, 8, 32, 3, 2, 1}}}) {
        const auto& g = c.g;
        const auto x = random_vec(static_cast<std::size_t>(g.batch * g.in_channels * g.height * g.width), rng);
        const auto w = random_vec(static_cast<std::size_t>(g.out_channels * g.in_channels * g.kernel * g.kernel), rng);
        const auto bias = random_vec(static_cast<std::size_t>(g.out_channels), rng);
        const std::size_t ny = static_cast<std::size_t>(g.batch * g.out_channels * g.out_height() * g.out_width());
        std::vector<float> y_ref(ny), y_par(ny);
        double tr = time_ms([&] { kernels::reference::conv2d_forward(g, x.data(), w.data(), bias.data(), y_ref.data()); }, 3);
        double tp = time_ms([&] { kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), y_par.data()); }, 3);
        std::printf("%-34s %12.3f %12.3f %8.2f %10.2e\n", (std::string(c.name) + " fwd").c_str(), tr, tp, tr / tp,
                    max_diff(y_ref, y_par));

        const auto dy = random_vec(ny, rng);
        std::vector<float> dx_ref(x.size()), dx_par(x.size()), dw_ref(w.size()), dw_par(w.size()), db_ref(bias.size()),
            db_par(bias.size());
        tr = time_ms([&] { kernels::reference::conv2d_backward(g, x.data(), w.data(), dy.data(), dx_ref.data(), dw_ref.data(), db_ref.data()); }, 3);
        tp = time_ms([&] { kernels::conv2d_backward(g, x.data(), w.data(), dy.data(), dx_par.data(), dw_par.data(), db_par.data()); }, 3);
        std::printf("%-34s %12.3f %12.3f %8.2f %10.2e\n", (std::string(c.name) + " bwd").c_str(), tr, tp, tr / tp,
                    std::max({max_diff(dx_ref, dx_par), max_diff(dw_ref, dw_par), max_diff(db_ref, db_par)}));
    }
    return 0;
}
