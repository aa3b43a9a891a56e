#include "diffuasr/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <vector>

namespace diffuasr::kernels {

namespace {

constexpr std::int64_t kParallelWork = 1 << 15;

// Row i of C = A[i,:]·B with A given as (row pointer, stride between p's).
template <typename T>
inline void gemm_row(std::int64_t n, std::int64_t k, const T* a_row, std::int64_t a_step,
                     const T* b, T* c_row) {
    for (std::int64_t p = 0; p < k; ++p) {
        const T av = a_row[p * a_step];
        const T* b_row = b + p * n;
        for (std::int64_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
}

template <typename T>
void transpose(std::int64_t rows, std::int64_t cols, const T* src, T* dst) {
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// B is k×n row-major here (already un-transposed).
template <typename T>
void gemm_nb(bool trans_a, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
             const T* b, T* c, bool accumulate, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel && m * n * k >= kParallelWork)
    for (std::int64_t i = 0; i < m; ++i) {
        T* c_row = c + i * n;
        if (!accumulate) std::fill(c_row, c_row + n, T(0));
        if (trans_a)
            gemm_row(n, k, a + i, m, b, c_row);
        else
            gemm_row(n, k, a + i * k, 1, b, c_row);
    }
}

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
               const T* a, const T* b, T* c, bool accumulate, bool parallel) {
    if (!trans_b) {
        gemm_nb(trans_a, m, n, k, a, b, c, accumulate, parallel);
        return;
    }
    std::vector<T> bt(static_cast<std::size_t>(k * n));
    transpose(n, k, b, bt.data());
    gemm_nb(trans_a, m, n, k, a, bt.data(), c, accumulate, parallel);
}

// cols[(c,ki,kj), (n,oh,ow)]
template <typename T>
void im2col(const Conv2dGeometry& g, const T* x, T* cols) {
    const std::int64_t oh_n = g.out_height(), ow_n = g.out_width();
    const std::int64_t np = g.batch * oh_n * ow_n;
    const std::int64_t rows = g.in_channels * g.kernel * g.kernel;
#pragma omp parallel for schedule(static) if (rows * np >= kParallelWork)
    for (std::int64_t q = 0; q < rows; ++q) {
        const std::int64_t c = q / (g.kernel * g.kernel);
        const std::int64_t ki = (q / g.kernel) % g.kernel;
        const std::int64_t kj = q % g.kernel;
        T* out = cols + q * np;
        for (std::int64_t s = 0; s < g.batch; ++s) {
            const T* plane = x + (s * g.in_channels + c) * g.height * g.width;
            for (std::int64_t oh = 0; oh < oh_n; ++oh) {
                const std::int64_t ih = oh * g.stride - g.padding + ki;
                for (std::int64_t ow = 0; ow < ow_n; ++ow) {
                    const std::int64_t iw = ow * g.stride - g.padding + kj;
                    const bool inside = ih >= 0 && ih < g.height && iw >= 0 && iw < g.width;
                    *out++ = inside ? plane[ih * g.width + iw] : T(0);
                }
            }
        }
    }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate) {
    gemm_impl(trans_a, trans_b, m, n, k, a, b, c, accumulate, true);
}

template <typename T>
void bmm(bool trans_a, bool trans_b, std::int64_t batch, std::int64_t m, std::int64_t n,
         std::int64_t k, const T* a, const T* b, T* c, bool accumulate) {
#pragma omp parallel for schedule(static) if (batch * m * n * k >= kParallelWork)
    for (std::int64_t s = 0; s < batch; ++s)
        gemm_impl(trans_a, trans_b, m, n, k, a + s * m * k, b + s * k * n, c + s * m * n,
                  accumulate, false);
}

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, const T* x, const T* w, const T* bias, T* y) {
    const std::int64_t hw = g.out_height() * g.out_width();
    const std::int64_t np = g.batch * hw;
    const std::int64_t rows = g.in_channels * g.kernel * g.kernel;
    std::vector<T> cols(static_cast<std::size_t>(rows * np));
    im2col(g, x, cols.data());
    std::vector<T> out(static_cast<std::size_t>(g.out_channels * np));
    gemm_impl(false, false, g.out_channels, np, rows, w, cols.data(), out.data(), false, true);
#pragma omp parallel for schedule(static) if (g.out_channels * np >= kParallelWork)
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
        const T b = bias ? bias[o] : T(0);
        for (std::int64_t s = 0; s < g.batch; ++s) {
            const T* src = out.data() + o * np + s * hw;
            T* dst = y + (s * g.out_channels + o) * hw;
            for (std::int64_t j = 0; j < hw; ++j) dst[j] = src[j] + b;
        }
    }
}

template <typename T>
void conv2d_backward(const Conv2dGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* db) {
    const std::int64_t oh_n = g.out_height(), ow_n = g.out_width();
    const std::int64_t hw = oh_n * ow_n;
    const std::int64_t np = g.batch * hw;
    const std::int64_t rows = g.in_channels * g.kernel * g.kernel;

    // dY as [O, (n,oh,ow)]
    std::vector<T> dy2(static_cast<std::size_t>(g.out_channels * np));
    for (std::int64_t o = 0; o < g.out_channels; ++o)
        for (std::int64_t s = 0; s < g.batch; ++s)
            std::copy_n(dy + (s * g.out_channels + o) * hw, hw, dy2.data() + o * np + s * hw);

    if (db) {
        for (std::int64_t o = 0; o < g.out_channels; ++o) {
            T acc = 0;
            const T* row = dy2.data() + o * np;
            for (std::int64_t j = 0; j < np; ++j) acc += row[j];
            db[o] = acc;
        }
    }
    if (dw) {
        std::vector<T> cols(static_cast<std::size_t>(rows * np));
        im2col(g, x, cols.data());
        gemm_impl(false, true, g.out_channels, rows, np, dy2.data(), cols.data(), dw, false, true);
    }
    if (dx) {
        std::vector<T> dcols(static_cast<std::size_t>(rows * np));
        gemm_impl(true, false, rows, np, g.out_channels, w, dy2.data(), dcols.data(), false, true);
        const std::int64_t planes = g.batch * g.in_channels;
#pragma omp parallel for schedule(static) if (rows * np >= kParallelWork)
        for (std::int64_t pl = 0; pl < planes; ++pl) {
            const std::int64_t s = pl / g.in_channels, c = pl % g.in_channels;
            T* plane = dx + pl * g.height * g.width;
            std::fill(plane, plane + g.height * g.width, T(0));
            for (std::int64_t ki = 0; ki < g.kernel; ++ki)
                for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                    const std::int64_t q = (c * g.kernel + ki) * g.kernel + kj;
                    const T* src = dcols.data() + q * np + s * hw;
                    for (std::int64_t oh = 0; oh < oh_n; ++oh) {
                        const std::int64_t ih = oh * g.stride - g.padding + ki;
                        if (ih < 0 || ih >= g.height) continue;
                        for (std::int64_t ow = 0; ow < ow_n; ++ow) {
                            const std::int64_t iw = ow * g.stride - g.padding + kj;
                            if (iw < 0 || iw >= g.width) continue;
                            plane[ih * g.width + iw] += src[oh * ow_n + ow];
                        }
                    }
                }
        }
    }
}

#define DIFFUASR_INSTANTIATE(T)                                                                  \
    template void gemm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const T*,        \
                          const T*, T*, bool);                                                   \
    template void bmm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, std::int64_t,     \
                         const T*, const T*, T*, bool);                                          \
    template void conv2d_forward<T>(const Conv2dGeometry&, const T*, const T*, const T*, T*);    \
    template void conv2d_backward<T>(const Conv2dGeometry&, const T*, const T*, const T*, T*, T*, \
                                     T*);
DIFFUASR_INSTANTIATE(float)
DIFFUASR_INSTANTIATE(double)
#undef DIFFUASR_INSTANTIATE

}  // namespace diffuasr::kernels
