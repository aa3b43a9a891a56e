#pragma once

#include <cstdint>

// Compute kernels behind the differentiable ops. The default namespace holds
// the OpenMP-parallel versions; `kernels::reference` holds plain serial loops
// that tests and bench_kernels compare against.
//
// Every parallel kernel assigns each output element to exactly one thread and
// accumulates it in a fixed order, so results are bitwise independent of the
// thread count.

namespace diffuasr::kernels {

/// C[m×n] = op(A)·op(B), or C += ... when `accumulate`. op(A) is m×k; with
/// `trans_a` A is stored k×m. op(B) is k×n; with `trans_b` B is stored n×k.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate);

/// Batched NN/NT/TN product over `batch` independent matrices.
template <typename T>
void bmm(bool trans_a, bool trans_b, std::int64_t batch, std::int64_t m, std::int64_t n,
         std::int64_t k, const T* a, const T* b, T* c, bool accumulate);

struct Conv2dGeometry {
    std::int64_t batch = 1;
    std::int64_t in_channels = 1;
    std::int64_t height = 1;
    std::int64_t width = 1;
    std::int64_t out_channels = 1;
    std::int64_t kernel = 3;
    std::int64_t stride = 1;
    std::int64_t padding = 1;

    std::int64_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
    std::int64_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

/// y[N,O,Ho,Wo] = conv(x[N,C,H,W], w[O,C,K,K]) + bias[O]. `bias` may be null.
template <typename T>
void conv2d_forward(const Conv2dGeometry& g, const T* x, const T* w, const T* bias, T* y);

/// Gradients of conv2d_forward. Any of dx/dw/db may be null; non-null outputs
/// are overwritten.
template <typename T>
void conv2d_backward(const Conv2dGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* db);

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate);

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void conv2d_backward(const Conv2dGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* db);

}  // namespace reference

}  // namespace diffuasr::kernels
