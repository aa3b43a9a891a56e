#pragma once

#include <cstdint>
#include <vector>

#include "diffuasr/autograd.hpp"
#include "diffuasr/rng.hpp"

// Differentiable operations. Shape errors name both operand shapes.

namespace diffuasr::nn {

template <typename T>
Var<T> constant(Tensor<T> value) {
    return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
    return Var<T>(std::move(value), true);
}

// Elementwise with numpy-style broadcasting.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T s);
template <typename T>
Var<T> add_scalar(const Var<T>& a, T s);

/// a[..., k] · b[k, n] -> [..., n]; with `trans_b`, b is stored [n, k].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_b = false);

/// a[B, m, k] · op(b) where op(b) is [B, k, n] (stored [B, n, k] with `trans_b`).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_b = false);

template <typename T>
Var<T> permute(const Var<T>& a, const std::vector<int>& perm);
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, int axis);
template <typename T>
Var<T> slice(const Var<T>& a, int axis, std::int64_t start, std::int64_t length);

/// x[N,C,H,W] conv w[O,C,K,K] (+ bias[O] when defined).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::int64_t stride,
              std::int64_t padding);

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x);

template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);
/// Sum over the last axis.
template <typename T>
Var<T> sum_last(const Var<T>& a);

/// Zero-mean, unit-variance along `axis` (no affine terms).
template <typename T>
Var<T> normalize(const Var<T>& a, int axis, T eps = T(1e-5));

/// Softmax over the last axis. Entries with keep[i] == 0 get probability 0;
/// every row must keep at least one entry.
template <typename T>
Var<T> softmax(const Var<T>& a, const std::vector<std::uint8_t>* keep = nullptr);

template <typename T>
Var<T> silu(const Var<T>& a);
template <typename T>
Var<T> relu(const Var<T>& a);
/// log σ(a), stable for large |a|.
template <typename T>
Var<T> log_sigmoid(const Var<T>& a);

/// Row lookup: table[V, d] at `ids` -> prefix ++ [d].
template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<std::int64_t>& ids, Shape prefix);

/// Mean of looked-up rows per bag -> [bags, d]. Bags must be nonempty.
template <typename T>
Var<T> embedding_bag_mean(const Var<T>& table, const std::vector<std::vector<std::int64_t>>& bags);

/// Inverted dropout; identity when !train or rate == 0.
template <typename T>
Var<T> dropout(const Var<T>& a, double rate, bool train, Rng* rng);

/// mean((a - b)^2) over all entries.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

}  // namespace diffuasr::nn
