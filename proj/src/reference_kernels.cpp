#include "diffuasr/kernels.hpp"

namespace diffuasr::kernels::reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            T acc = accumulate ? c[i * n + j] : T(0);
            for (std::int64_t p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * m + i] : a[i * k + p];
                const T bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
}

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, const T* x, const T* w, const T* bias, T* y) {
    const std::int64_t oh_n = g.out_height(), ow_n = g.out_width();
    for (std::int64_t s = 0; s < g.batch; ++s)
        for (std::int64_t o = 0; o < g.out_channels; ++o)
            for (std::int64_t oh = 0; oh < oh_n; ++oh)
                for (std::int64_t ow = 0; ow < ow_n; ++ow) {
                    T acc = bias ? bias[o] : T(0);
                    for (std::int64_t c = 0; c < g.in_channels; ++c)
                        for (std::int64_t ki = 0; ki < g.kernel; ++ki)
                            for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                                const std::int64_t ih = oh * g.stride - g.padding + ki;
                                const std::int64_t iw = ow * g.stride - g.padding + kj;
                                if (ih < 0 || ih >= g.height || iw < 0 || iw >= g.width) continue;
                                acc += x[((s * g.in_channels + c) * g.height + ih) * g.width + iw] *
                                       w[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
                            }
                    y[((s * g.out_channels + o) * oh_n + oh) * ow_n + ow] = acc;
                }
}

template <typename T>
void conv2d_backward(const Conv2dGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* db) {
    const std::int64_t oh_n = g.out_height(), ow_n = g.out_width();
    const std::int64_t wsize = g.out_channels * g.in_channels * g.kernel * g.kernel;
    if (dx)
        for (std::int64_t i = 0; i < g.batch * g.in_channels * g.height * g.width; ++i) dx[i] = 0;
    if (dw)
        for (std::int64_t i = 0; i < wsize; ++i) dw[i] = 0;
    if (db)
        for (std::int64_t o = 0; o < g.out_channels; ++o) db[o] = 0;
    for (std::int64_t s = 0; s < g.batch; ++s)
        for (std::int64_t o = 0; o < g.out_channels; ++o)
            for (std::int64_t oh = 0; oh < oh_n; ++oh)
                for (std::int64_t ow = 0; ow < ow_n; ++ow) {
                    const T go = dy[((s * g.out_channels + o) * oh_n + oh) * ow_n + ow];
                    if (db) db[o] += go;
                    for (std::int64_t c = 0; c < g.in_channels; ++c)
                        for (std::int64_t ki = 0; ki < g.kernel; ++ki)
                            for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                                const std::int64_t ih = oh * g.stride - g.padding + ki;
                                const std::int64_t iw = ow * g.stride - g.padding + kj;
                                if (ih < 0 || ih >= g.height || iw < 0 || iw >= g.width) continue;
                                const std::int64_t xi =
                                    ((s * g.in_channels + c) * g.height + ih) * g.width + iw;
                                const std::int64_t wi =
                                    ((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj;
                                if (dx) dx[xi] += go * w[wi];
                                if (dw) dw[wi] += go * x[xi];
                            }
                }
}

#define DIFFUASR_INSTANTIATE(T)                                                                  \
    template void gemm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const T*,        \
                          const T*, T*, bool);                                                   \
    template void conv2d_forward<T>(const Conv2dGeometry&, const T*, const T*, const T*, T*);    \
    template void conv2d_backward<T>(const Conv2dGeometry&, const T*, const T*, const T*, T*, T*, \
                                     T*);
DIFFUASR_INSTANTIATE(float)
DIFFUASR_INSTANTIATE(double)
#undef DIFFUASR_INSTANTIATE

}  // namespace diffuasr::kernels::reference
