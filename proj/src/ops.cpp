#include "diffuasr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "diffuasr/kernels.hpp"

namespace diffuasr::nn {

namespace {

std::string pair_str(const Shape& a, const Shape& b) { return shape_str(a) + " vs " + shape_str(b); }

// Broadcast plan with adjacent compatible axes coalesced; the last entry is
// the innermost loop.
struct BroadcastPlan {
    Shape out;
    std::vector<std::int64_t> dims, stride_a, stride_b;
};

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

BroadcastPlan make_plan(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape pa(r, 1), pb(r, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
    BroadcastPlan plan;
    plan.out.resize(r);
    auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
    std::vector<std::int64_t> dims, xa, xb;
    for (std::size_t i = 0; i < r; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + pair_str(a, b));
        plan.out[i] = std::max(pa[i], pb[i]);
        if (plan.out[i] == 1) continue;
        const std::int64_t ea = pa[i] == 1 ? 0 : sa[i];
        const std::int64_t eb = pb[i] == 1 ? 0 : sb[i];
        if (!dims.empty() && xa.back() == ea * plan.out[i] && xb.back() == eb * plan.out[i]) {
            dims.back() *= plan.out[i];
            xa.back() = ea;
            xb.back() = eb;
        } else {
            dims.push_back(plan.out[i]);
            xa.push_back(ea);
            xb.push_back(eb);
        }
    }
    if (dims.empty()) {
        dims.push_back(1);
        xa.push_back(0);
        xb.push_back(0);
    }
    plan.dims = std::move(dims);
    plan.stride_a = std::move(xa);
    plan.stride_b = std::move(xb);
    return plan;
}

// f(out_index, a_index, b_index) over every output element, in order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t r = p.dims.size();
    const std::int64_t inner = p.dims[r - 1], ia_step = p.stride_a[r - 1], ib_step = p.stride_b[r - 1];
    std::int64_t outer = 1;
    for (std::size_t i = 0; i + 1 < r; ++i) outer *= p.dims[i];
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t o = 0, base_a = 0, base_b = 0;
    for (std::int64_t it = 0; it < outer; ++it) {
        std::int64_t ia = base_a, ib = base_b;
        for (std::int64_t j = 0; j < inner; ++j, ++o, ia += ia_step, ib += ib_step) f(o, ia, ib);
        for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
            base_a += p.stride_a[d];
            base_b += p.stride_b[d];
            if (++idx[d] < p.dims[d]) break;
            base_a -= p.stride_a[d] * p.dims[d];
            base_b -= p.stride_b[d] * p.dims[d];
            idx[d] = 0;
        }
    }
}

enum class BinOp { kAdd, kSub, kMul };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinOp kind, const char* name) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.shape() == bv.shape()) {
        Tensor<T> out(av.shape());
        const std::int64_t n = av.numel();
        const T* pa = av.ptr();
        const T* pb = bv.ptr();
        T* po = out.ptr();
        switch (kind) {
            case BinOp::kAdd: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
            case BinOp::kSub: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
            case BinOp::kMul: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
        }
        return make_result<T>(std::move(out), {a, b}, name, [kind](Node<T>& node) {
            const T* g = node.grad.ptr();
            const std::int64_t n = node.grad.numel();
            const T* pa = node.parents[0]->value.ptr();
            const T* pb = node.parents[1]->value.ptr();
            if (auto* ga = node.parent_grad(0)) {
                T* d = ga->ptr();
                if (kind == BinOp::kMul)
                    for (std::int64_t i = 0; i < n; ++i) d[i] += g[i] * pb[i];
                else
                    for (std::int64_t i = 0; i < n; ++i) d[i] += g[i];
            }
            if (auto* gb = node.parent_grad(1)) {
                T* d = gb->ptr();
                if (kind == BinOp::kMul)
                    for (std::int64_t i = 0; i < n; ++i) d[i] += g[i] * pa[i];
                else if (kind == BinOp::kSub)
                    for (std::int64_t i = 0; i < n; ++i) d[i] -= g[i];
                else
                    for (std::int64_t i = 0; i < n; ++i) d[i] += g[i];
            }
        });
    }
    BroadcastPlan plan = make_plan(av.shape(), bv.shape(), name);
    Tensor<T> out(plan.out);
    const T* pa = av.ptr();
    const T* pb = bv.ptr();
    T* po = out.ptr();
    switch (kind) {
        case BinOp::kAdd:
            for_each_broadcast(plan, [&](auto o, auto i, auto j) { po[o] = pa[i] + pb[j]; });
            break;
        case BinOp::kSub:
            for_each_broadcast(plan, [&](auto o, auto i, auto j) { po[o] = pa[i] - pb[j]; });
            break;
        case BinOp::kMul:
            for_each_broadcast(plan, [&](auto o, auto i, auto j) { po[o] = pa[i] * pb[j]; });
            break;
    }
    return make_result<T>(std::move(out), {a, b}, name, [kind, plan](Node<T>& node) {
        const T* g = node.grad.ptr();
        const T* pa = node.parents[0]->value.ptr();
        const T* pb = node.parents[1]->value.ptr();
        if (auto* ga = node.parent_grad(0)) {
            T* d = ga->ptr();
            if (kind == BinOp::kMul)
                for_each_broadcast(plan, [&](auto o, auto i, auto j) { d[i] += g[o] * pb[j]; });
            else
                for_each_broadcast(plan, [&](auto o, auto i, auto) { d[i] += g[o]; });
        }
        if (auto* gb = node.parent_grad(1)) {
            T* d = gb->ptr();
            if (kind == BinOp::kMul)
                for_each_broadcast(plan, [&](auto o, auto i, auto j) { d[j] += g[o] * pa[i]; });
            else if (kind == BinOp::kSub)
                for_each_broadcast(plan, [&](auto o, auto, auto j) { d[j] -= g[o]; });
            else
                for_each_broadcast(plan, [&](auto o, auto, auto j) { d[j] += g[o]; });
        }
    });
}

// Elementwise unary op given value map and derivative (from input x and output y).
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, const char* name, F f, D df) {
    const auto& av = a.value();
    Tensor<T> out(av.shape());
    const std::int64_t n = av.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(av[i]);
    return make_result<T>(std::move(out), {a}, name, [df](Node<T>& node) {
        auto* ga = node.parent_grad(0);
        if (!ga) return;
        const auto& x = node.parents[0]->value;
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) (*ga)[i] += node.grad[i] * df(x[i], node.value[i]);
    });
}

std::vector<std::int64_t> strides_of(const Shape& s) { return contiguous_strides(s); }

// Copies src (shape `in`) into dst laid out as permuted shape.
template <typename T>
void permute_copy(const T* src, const Shape& in, const std::vector<int>& perm, T* dst, bool inverse) {
    const std::size_t r = in.size();
    auto in_strides = strides_of(in);
    Shape out(r);
    std::vector<std::int64_t> step(r);
    for (std::size_t i = 0; i < r; ++i) {
        out[i] = in[static_cast<std::size_t>(perm[i])];
        step[i] = in_strides[static_cast<std::size_t>(perm[i])];
    }
    const std::int64_t n = shape_numel(in);
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t off = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        if (inverse)
            dst[off] += src[o];
        else
            dst[o] = src[off];
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            off += step[d];
            if (++idx[d] < out[d]) break;
            off -= step[d] * out[d];
            idx[d] = 0;
        }
    }
}

int normalize_axis(int axis, int rank, const char* op) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
    return axis;
}

// (outer, mid, inner) split around `axis`.
struct AxisSplit {
    std::int64_t outer = 1, mid = 1, inner = 1;
};
AxisSplit split_at(const Shape& s, int axis) {
    AxisSplit sp;
    for (int i = 0; i < axis; ++i) sp.outer *= s[i];
    sp.mid = s[axis];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return binary(a, b, BinOp::kAdd, "add");
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    return binary(a, b, BinOp::kSub, "sub");
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    return binary(a, b, BinOp::kMul, "mul");
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    return unary(a, "scale", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
    return unary(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() < 1 || bv.rank() != 2)
        throw ShapeError("matmul: expected [..., k] x [k, n], got " + pair_str(av.shape(), bv.shape()));
    const std::int64_t k = av.dim(-1);
    const std::int64_t n = trans_b ? bv.dim(0) : bv.dim(1);
    const std::int64_t kb = trans_b ? bv.dim(1) : bv.dim(0);
    if (k != kb) throw ShapeError("matmul: inner dimension mismatch " + pair_str(av.shape(), bv.shape()));
    const std::int64_t m = av.numel() / k;
    Shape out_shape = av.shape();
    out_shape.back() = n;
    Tensor<T> out(out_shape);
    kernels::gemm(false, trans_b, m, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
    return make_result<T>(std::move(out), {a, b}, "matmul", [m, n, k, trans_b](Node<T>& node) {
        const T* g = node.grad.ptr();
        const T* ap = node.parents[0]->value.ptr();
        const T* bp = node.parents[1]->value.ptr();
        if (auto* ga = node.parent_grad(0))  // dA = dC · op(B)^T
            kernels::gemm(false, !trans_b, m, k, n, g, bp, ga->ptr(), true);
        if (auto* gb = node.parent_grad(1)) {
            if (trans_b)  // B stored [n,k]: dB = dC^T · A
                kernels::gemm(true, false, n, k, m, g, ap, gb->ptr(), true);
            else  // dB = A^T · dC
                kernels::gemm(true, false, k, n, m, ap, g, gb->ptr(), true);
        }
    });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0))
        throw ShapeError("bmm: expected [B,m,k] x [B,k,n], got " + pair_str(av.shape(), bv.shape()));
    const std::int64_t batch = av.dim(0), m = av.dim(1), k = av.dim(2);
    const std::int64_t kb = trans_b ? bv.dim(2) : bv.dim(1);
    const std::int64_t n = trans_b ? bv.dim(1) : bv.dim(2);
    if (k != kb) throw ShapeError("bmm: inner dimension mismatch " + pair_str(av.shape(), bv.shape()));
    Tensor<T> out(Shape{batch, m, n});
    kernels::bmm(false, trans_b, batch, m, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
    return make_result<T>(std::move(out), {a, b}, "bmm", [batch, m, n, k, trans_b](Node<T>& node) {
        const T* g = node.grad.ptr();
        const T* ap = node.parents[0]->value.ptr();
        const T* bp = node.parents[1]->value.ptr();
        if (auto* ga = node.parent_grad(0))
            kernels::bmm(false, !trans_b, batch, m, k, n, g, bp, ga->ptr(), true);
        if (auto* gb = node.parent_grad(1)) {
            if (trans_b)
                kernels::bmm(true, false, batch, n, k, m, g, ap, gb->ptr(), true);
            else
                kernels::bmm(true, false, batch, k, n, m, ap, g, gb->ptr(), true);
        }
    });
}

template <typename T>
Var<T> permute(const Var<T>& a, const std::vector<int>& perm) {
    const auto& in = a.shape();
    if (perm.size() != in.size()) throw ShapeError("permute: rank mismatch for " + shape_str(in));
    std::vector<int> check(perm);
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i)
        if (check[i] != static_cast<int>(i)) throw ShapeError("permute: invalid permutation");
    Shape out_shape(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out_shape[i] = in[static_cast<std::size_t>(perm[i])];
    Tensor<T> out(out_shape);
    permute_copy(a.value().ptr(), in, perm, out.ptr(), false);
    return make_result<T>(std::move(out), {a}, "permute", [perm](Node<T>& node) {
        if (auto* ga = node.parent_grad(0))
            permute_copy(node.grad.ptr(), node.parents[0]->value.shape(), perm, ga->ptr(), true);
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), {a}, "reshape", [](Node<T>& node) {
        if (auto* ga = node.parent_grad(0)) {
            const std::int64_t n = node.grad.numel();
            for (std::int64_t i = 0; i < n; ++i) (*ga)[i] += node.grad[i];
        }
    });
}

template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, int axis) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != sb.size()) throw ShapeError("concat: rank mismatch " + pair_str(sa, sb));
    axis = normalize_axis(axis, static_cast<int>(sa.size()), "concat");
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (static_cast<int>(i) != axis && sa[i] != sb[i])
            throw ShapeError("concat: shape mismatch " + pair_str(sa, sb));
    Shape out_shape = sa;
    out_shape[static_cast<std::size_t>(axis)] += sb[static_cast<std::size_t>(axis)];
    const auto pa = split_at(sa, axis), pb = split_at(sb, axis);
    const std::int64_t ca = pa.mid * pa.inner, cb = pb.mid * pb.inner;
    Tensor<T> out(out_shape);
    for (std::int64_t o = 0; o < pa.outer; ++o) {
        std::copy_n(a.value().ptr() + o * ca, ca, out.ptr() + o * (ca + cb));
        std::copy_n(b.value().ptr() + o * cb, cb, out.ptr() + o * (ca + cb) + ca);
    }
    const std::int64_t outer = pa.outer;
    return make_result<T>(std::move(out), {a, b}, "concat", [outer, ca, cb](Node<T>& node) {
        const T* g = node.grad.ptr();
        if (auto* ga = node.parent_grad(0))
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < ca; ++i) (*ga)[o * ca + i] += g[o * (ca + cb) + i];
        if (auto* gb = node.parent_grad(1))
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < cb; ++i) (*gb)[o * cb + i] += g[o * (ca + cb) + ca + i];
    });
}

template <typename T>
Var<T> slice(const Var<T>& a, int axis, std::int64_t start, std::int64_t length) {
    const auto& s = a.shape();
    axis = normalize_axis(axis, a.value().rank(), "slice");
    if (start < 0 || length < 0 || start + length > s[static_cast<std::size_t>(axis)])
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of bounds for " + shape_str(s));
    const auto sp = split_at(s, axis);
    Shape out_shape = s;
    out_shape[static_cast<std::size_t>(axis)] = length;
    Tensor<T> out(out_shape);
    const std::int64_t src_block = sp.mid * sp.inner, dst_block = length * sp.inner, off = start * sp.inner;
    for (std::int64_t o = 0; o < sp.outer; ++o)
        std::copy_n(a.value().ptr() + o * src_block + off, dst_block, out.ptr() + o * dst_block);
    const std::int64_t outer = sp.outer;
    return make_result<T>(std::move(out), {a}, "slice", [outer, src_block, dst_block, off](Node<T>& node) {
        if (auto* ga = node.parent_grad(0))
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < dst_block; ++i)
                    (*ga)[o * src_block + off + i] += node.grad[o * dst_block + i];
    });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::int64_t stride,
              std::int64_t padding) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3])
        throw ShapeError("conv2d: expected x[N,C,H,W] and w[O,C,K,K], got " + pair_str(xs, ws));
    if (bias.defined() && (bias.value().rank() != 1 || bias.dim(0) != ws[0]))
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " vs weight " + shape_str(ws));
    kernels::Conv2dGeometry g;
    g.batch = xs[0];
    g.in_channels = xs[1];
    g.height = xs[2];
    g.width = xs[3];
    g.out_channels = ws[0];
    g.kernel = ws[2];
    g.stride = stride;
    g.padding = padding;
    if (g.out_height() <= 0 || g.out_width() <= 0)
        throw ShapeError("conv2d: empty output for input " + shape_str(xs));
    Tensor<T> out(Shape{g.batch, g.out_channels, g.out_height(), g.out_width()});
    kernels::conv2d_forward(g, x.value().ptr(), w.value().ptr(),
                            bias.defined() ? bias.value().ptr() : nullptr, out.ptr());
    return make_result<T>(std::move(out), {x, w, bias}, "conv2d", [g](Node<T>& node) {
        auto* gx = node.parent_grad(0);
        auto* gw = node.parent_grad(1);
        auto* gb = node.parent_grad(2);
        Tensor<T> dx, dw, db;
        if (gx) dx = Tensor<T>(gx->shape());
        if (gw) dw = Tensor<T>(gw->shape());
        if (gb) db = Tensor<T>(gb->shape());
        kernels::conv2d_backward(g, node.parents[0]->value.ptr(), node.parents[1]->value.ptr(),
                                 node.grad.ptr(), gx ? dx.ptr() : nullptr, gw ? dw.ptr() : nullptr,
                                 gb ? db.ptr() : nullptr);
        auto acc = [](Tensor<T>* dst, const Tensor<T>& src) {
            for (std::int64_t i = 0; i < src.numel(); ++i) (*dst)[i] += src[i];
        };
        if (gx) acc(gx, dx);
        if (gw) acc(gw, dw);
        if (gb) acc(gb, db);
    });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("upsample_nearest2x: expected [N,C,H,W], got " + shape_str(xs));
    const std::int64_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
    Tensor<T> out(Shape{xs[0], xs[1], 2 * h, 2 * w});
    for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < 2 * h; ++i)
            for (std::int64_t j = 0; j < 2 * w; ++j)
                out[(p * 2 * h + i) * 2 * w + j] = x.value()[(p * h + i / 2) * w + j / 2];
    return make_result<T>(std::move(out), {x}, "upsample", [planes, h, w](Node<T>& node) {
        if (auto* gx = node.parent_grad(0))
            for (std::int64_t p = 0; p < planes; ++p)
                for (std::int64_t i = 0; i < 2 * h; ++i)
                    for (std::int64_t j = 0; j < 2 * w; ++j)
                        (*gx)[(p * h + i / 2) * w + j / 2] += node.grad[(p * 2 * h + i) * 2 * w + j];
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T acc = 0;
    for (T v : a.value().data()) acc += v;
    return make_result<T>(Tensor<T>(Shape{}, acc), {a}, "sum", [](Node<T>& node) {
        if (auto* ga = node.parent_grad(0)) {
            const T g = node.grad[0];
            for (auto& v : ga->data()) v += g;
        }
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    const std::int64_t n = a.numel();
    if (n == 0) throw ShapeError("mean: empty tensor");
    T acc = 0;
    for (T v : a.value().data()) acc += v;
    return make_result<T>(Tensor<T>(Shape{}, acc / static_cast<T>(n)), {a}, "mean", [n](Node<T>& node) {
        if (auto* ga = node.parent_grad(0)) {
            const T g = node.grad[0] / static_cast<T>(n);
            for (auto& v : ga->data()) v += g;
        }
    });
}

template <typename T>
Var<T> sum_last(const Var<T>& a) {
    const auto& s = a.shape();
    if (s.empty()) throw ShapeError("sum_last: scalar input");
    const std::int64_t k = s.back(), rows = a.numel() / std::max<std::int64_t>(k, 1);
    Shape out_shape(s.begin(), s.end() - 1);
    Tensor<T> out(out_shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::int64_t j = 0; j < k; ++j) acc += a.value()[r * k + j];
        out[r] = acc;
    }
    return make_result<T>(std::move(out), {a}, "sum_last", [rows, k](Node<T>& node) {
        if (auto* ga = node.parent_grad(0))
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < k; ++j) (*ga)[r * k + j] += node.grad[r];
    });
}

template <typename T>
Var<T> normalize(const Var<T>& a, int axis, T eps) {
    axis = normalize_axis(axis, a.value().rank(), "normalize");
    const auto sp = split_at(a.shape(), axis);
    Tensor<T> out(a.shape());
    std::vector<T> rstd(static_cast<std::size_t>(sp.outer * sp.inner));
    const T* x = a.value().ptr();
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            const std::int64_t base = o * sp.mid * sp.inner + i;
            T mu = 0;
            for (std::int64_t c = 0; c < sp.mid; ++c) mu += x[base + c * sp.inner];
            mu /= static_cast<T>(sp.mid);
            T var = 0;
            for (std::int64_t c = 0; c < sp.mid; ++c) {
                const T d = x[base + c * sp.inner] - mu;
                var += d * d;
            }
            var /= static_cast<T>(sp.mid);
            const T r = T(1) / std::sqrt(var + eps);
            rstd[static_cast<std::size_t>(o * sp.inner + i)] = r;
            for (std::int64_t c = 0; c < sp.mid; ++c)
                out[base + c * sp.inner] = (x[base + c * sp.inner] - mu) * r;
        }
    return make_result<T>(std::move(out), {a}, "normalize", [sp, rstd = std::move(rstd)](Node<T>& node) {
        auto* ga = node.parent_grad(0);
        if (!ga) return;
        const T* y = node.value.ptr();
        const T* g = node.grad.ptr();
        const T inv_n = T(1) / static_cast<T>(sp.mid);
        for (std::int64_t o = 0; o < sp.outer; ++o)
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const std::int64_t base = o * sp.mid * sp.inner + i;
                T mg = 0, mgy = 0;
                for (std::int64_t c = 0; c < sp.mid; ++c) {
                    const std::int64_t idx = base + c * sp.inner;
                    mg += g[idx];
                    mgy += g[idx] * y[idx];
                }
                mg *= inv_n;
                mgy *= inv_n;
                const T r = rstd[static_cast<std::size_t>(o * sp.inner + i)];
                for (std::int64_t c = 0; c < sp.mid; ++c) {
                    const std::int64_t idx = base + c * sp.inner;
                    (*ga)[idx] += r * (g[idx] - mg - y[idx] * mgy);
                }
            }
    });
}

template <typename T>
Var<T> softmax(const Var<T>& a, const std::vector<std::uint8_t>* keep) {
    const auto& s = a.shape();
    if (s.empty()) throw ShapeError("softmax: scalar input");
    if (keep && static_cast<std::int64_t>(keep->size()) != a.numel())
        throw ShapeError("softmax: mask length " + std::to_string(keep->size()) + " vs input " + shape_str(s));
    const std::int64_t k = s.back(), rows = a.numel() / k;
    Tensor<T> out(s);
    const T* x = a.value().ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * k;
        T* yr = out.ptr() + r * k;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t j = 0; j < k; ++j)
            if (!keep || (*keep)[r * k + j]) mx = std::max(mx, xr[j]);
        if (!std::isfinite(mx)) throw ShapeError("softmax: row with no kept entries");
        T z = 0;
        for (std::int64_t j = 0; j < k; ++j) {
            yr[j] = (!keep || (*keep)[r * k + j]) ? std::exp(xr[j] - mx) : T(0);
            z += yr[j];
        }
        for (std::int64_t j = 0; j < k; ++j) yr[j] /= z;
    }
    return make_result<T>(std::move(out), {a}, "softmax", [rows, k](Node<T>& node) {
        auto* ga = node.parent_grad(0);
        if (!ga) return;
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* y = node.value.ptr() + r * k;
            const T* g = node.grad.ptr() + r * k;
            T dot = 0;
            for (std::int64_t j = 0; j < k; ++j) dot += y[j] * g[j];
            for (std::int64_t j = 0; j < k; ++j) (*ga)[r * k + j] += y[j] * (g[j] - dot);
        }
    });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    return unary(
        a, "silu", [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return unary(
        a, "relu", [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> log_sigmoid(const Var<T>& a) {
    return unary(
        a, "log_sigmoid", [](T x) { return std::min(x, T(0)) - std::log1p(std::exp(-std::abs(x))); },
        [](T x, T) { return T(1) / (T(1) + std::exp(x)); });
}

template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<std::int64_t>& ids, Shape prefix) {
    const auto& ts = table.shape();
    if (ts.size() != 2) throw ShapeError("embedding: table must be [V, d], got " + shape_str(ts));
    if (shape_numel(prefix) != static_cast<std::int64_t>(ids.size()))
        throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids for prefix " + shape_str(prefix));
    const std::int64_t vocab = ts[0], d = ts[1];
    for (auto id : ids)
        if (id < 0 || id >= vocab)
            throw ShapeError("embedding: id " + std::to_string(id) + " outside table " + shape_str(ts));
    Shape out_shape = prefix;
    out_shape.push_back(d);
    Tensor<T> out(out_shape);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.value().ptr() + ids[i] * d, d, out.ptr() + static_cast<std::int64_t>(i) * d);
    return make_result<T>(std::move(out), {table}, "embedding", [ids, d](Node<T>& node) {
        if (auto* gt = node.parent_grad(0))
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const T* g = node.grad.ptr() + static_cast<std::int64_t>(i) * d;
                T* dst = gt->ptr() + ids[i] * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += g[j];
            }
    });
}

template <typename T>
Var<T> embedding_bag_mean(const Var<T>& table, const std::vector<std::vector<std::int64_t>>& bags) {
    const auto& ts = table.shape();
    if (ts.size() != 2) throw ShapeError("embedding_bag_mean: table must be [V, d], got " + shape_str(ts));
    const std::int64_t vocab = ts[0], d = ts[1];
    const auto n = static_cast<std::int64_t>(bags.size());
    Tensor<T> out(Shape{n, d});
    for (std::int64_t b = 0; b < n; ++b) {
        const auto& bag = bags[static_cast<std::size_t>(b)];
        if (bag.empty()) throw ShapeError("embedding_bag_mean: empty bag " + std::to_string(b));
        T* dst = out.ptr() + b * d;
        for (auto id : bag) {
            if (id < 0 || id >= vocab)
                throw ShapeError("embedding_bag_mean: id " + std::to_string(id) + " outside table " + shape_str(ts));
            const T* row = table.value().ptr() + id * d;
            for (std::int64_t j = 0; j < d; ++j) dst[j] += row[j];
        }
        const T inv = T(1) / static_cast<T>(bag.size());
        for (std::int64_t j = 0; j < d; ++j) dst[j] *= inv;
    }
    return make_result<T>(std::move(out), {table}, "embedding_bag_mean", [bags, d](Node<T>& node) {
        auto* gt = node.parent_grad(0);
        if (!gt) return;
        for (std::size_t b = 0; b < bags.size(); ++b) {
            const T inv = T(1) / static_cast<T>(bags[b].size());
            const T* g = node.grad.ptr() + static_cast<std::int64_t>(b) * d;
            for (auto id : bags[b]) {
                T* dst = gt->ptr() + id * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += g[j] * inv;
            }
        }
    });
}

template <typename T>
Var<T> dropout(const Var<T>& a, double rate, bool train, Rng* rng) {
    if (!train || rate <= 0.0) return a;
    if (rate >= 1.0) throw ParameterError("dropout: rate must be < 1");
    if (!rng) throw ParameterError("dropout: training mode needs an Rng");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(static_cast<std::size_t>(a.numel()));
    for (auto& m : mask) m = rng->uniform() < rate ? T(0) : keep_scale;
    Tensor<T> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a.value()[i] * mask[static_cast<std::size_t>(i)];
    return make_result<T>(std::move(out), {a}, "dropout", [mask = std::move(mask)](Node<T>& node) {
        if (auto* ga = node.parent_grad(0))
            for (std::int64_t i = 0; i < node.grad.numel(); ++i)
                (*ga)[i] += node.grad[i] * mask[static_cast<std::size_t>(i)];
    });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("mse: shape mismatch " + pair_str(a.shape(), b.shape()));
    const std::int64_t n = a.numel();
    T acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    return make_result<T>(Tensor<T>(Shape{}, acc / static_cast<T>(n)), {a, b}, "mse", [n](Node<T>& node) {
        const T s = T(2) * node.grad[0] / static_cast<T>(n);
        const auto& av = node.parents[0]->value;
        const auto& bv = node.parents[1]->value;
        auto* ga = node.parent_grad(0);
        auto* gb = node.parent_grad(1);
        for (std::int64_t i = 0; i < n; ++i) {
            const T d = s * (av[i] - bv[i]);
            if (ga) (*ga)[i] += d;
            if (gb) (*gb)[i] -= d;
        }
    });
}

#define DIFFUASR_INSTANTIATE(T)                                                                        \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> scale(const Var<T>&, T);                                                           \
    template Var<T> add_scalar(const Var<T>&, T);                                                      \
    template Var<T> matmul(const Var<T>&, const Var<T>&, bool);                                        \
    template Var<T> bmm(const Var<T>&, const Var<T>&, bool);                                           \
    template Var<T> permute(const Var<T>&, const std::vector<int>&);                                   \
    template Var<T> reshape(const Var<T>&, Shape);                                                     \
    template Var<T> concat(const Var<T>&, const Var<T>&, int);                                         \
    template Var<T> slice(const Var<T>&, int, std::int64_t, std::int64_t);                             \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::int64_t, std::int64_t);   \
    template Var<T> upsample_nearest2x(const Var<T>&);                                                 \
    template Var<T> sum(const Var<T>&);                                                                \
    template Var<T> mean(const Var<T>&);                                                               \
    template Var<T> sum_last(const Var<T>&);                                                           \
    template Var<T> normalize(const Var<T>&, int, T);                                                  \
    template Var<T> softmax(const Var<T>&, const std::vector<std::uint8_t>*);                          \
    template Var<T> silu(const Var<T>&);                                                               \
    template Var<T> relu(const Var<T>&);                                                               \
    template Var<T> log_sigmoid(const Var<T>&);                                                        \
    template Var<T> embedding(const Var<T>&, const std::vector<std::int64_t>&, Shape);                 \
    template Var<T> embedding_bag_mean(const Var<T>&, const std::vector<std::vector<std::int64_t>>&);  \
    template Var<T> dropout(const Var<T>&, double, bool, Rng*);                                        \
    template Var<T> mse(const Var<T>&, const Var<T>&);
DIFFUASR_INSTANTIATE(float)
DIFFUASR_INSTANTIATE(double)
#undef DIFFUASR_INSTANTIATE

}  // namespace diffuasr::nn
