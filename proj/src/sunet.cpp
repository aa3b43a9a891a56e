#include "diffuasr/sunet.hpp"

#include <cmath>

namespace diffuasr {

using nn::Shape;
using nn::Tensor;
using nn::Var;

int SUNetConfig::side() const {
    const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(embedding_dim))));
    if (embedding_dim <= 0 || s * s != embedding_dim)
        throw ParameterError("embedding dimension " + std::to_string(embedding_dim) + " is not a perfect square");
    return s;
}

void SUNetConfig::validate() const {
    if (augment_length < 1) throw ParameterError("augment length M must be >= 1");
    const int s = side();
    if (levels < 1) throw ParameterError("SU-Net needs levels >= 1");
    if (static_cast<int>(channel_mult.size()) != levels)
        throw ParameterError("channel_mult has " + std::to_string(channel_mult.size()) + " entries for " +
                             std::to_string(levels) + " levels");
    if (s % (1 << (levels - 1)) != 0)
        throw ParameterError("spatial size " + std::to_string(s) + " is not divisible by 2^(levels-1) = " +
                             std::to_string(1 << (levels - 1)));
    if (base_width < 1 || num_res_blocks < 1) throw ParameterError("SU-Net widths and block counts must be >= 1");
    for (int m : channel_mult)
        if (m < 1) throw ParameterError("channel multipliers must be >= 1");
    if (num_items < 1) throw ParameterError("SU-Net needs num_items >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ParameterError("SU-Net dropout must be in [0, 1)");
}

nlohmann::json SUNetConfig::to_json() const {
    return {{"augment_length", augment_length}, {"embedding_dim", embedding_dim}, {"num_items", num_items},
            {"levels", levels},                 {"channel_mult", channel_mult},   {"base_width", base_width},
            {"num_res_blocks", num_res_blocks}, {"z_width", z_width},             {"dropout", dropout}};
}

SUNetConfig SUNetConfig::from_json(const nlohmann::json& j) {
    SUNetConfig c;
    c.augment_length = j.at("augment_length");
    c.embedding_dim = j.at("embedding_dim");
    c.num_items = j.at("num_items");
    c.levels = j.at("levels");
    c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
    c.base_width = j.at("base_width");
    c.num_res_blocks = j.at("num_res_blocks");
    c.z_width = j.value("z_width", 0);
    c.dropout = j.value("dropout", 0.0);
    return c;
}

std::vector<double> sinusoidal_step_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0)
        throw ParameterError("sinusoidal embedding needs an even positive dim, got " + std::to_string(dim));
    const int half = dim / 2;
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int k = 0; k < half; ++k) {
        const double omega = std::pow(10000.0, -2.0 * k / dim);
        out[static_cast<std::size_t>(k)] = std::sin(t * omega);
        out[static_cast<std::size_t>(half + k)] = std::cos(t * omega);
    }
    return out;
}

template <typename T>
typename SUNet<T>::Conv SUNet<T>::make_conv(const std::string& name, int in_ch, int out_ch, int kernel, int stride,
                                            int padding, Rng& rng) {
    const std::int64_t fan_in = static_cast<std::int64_t>(in_ch) * kernel * kernel;
    Conv c;
    c.w = params_.add(name + ".w", nn::uniform_init<T>(Shape{out_ch, in_ch, kernel, kernel}, fan_in, rng));
    c.b = params_.add(name + ".b", nn::uniform_init<T>(Shape{out_ch}, fan_in, rng));
    c.stride = stride;
    c.padding = padding;
    return c;
}

template <typename T>
typename SUNet<T>::Norm SUNet<T>::make_norm(const std::string& name, int ch) {
    Norm n;
    n.gain = params_.add(name + ".gain", Tensor<T>(Shape{1, ch, 1, 1}, T(1)));
    n.bias = params_.add(name + ".bias", Tensor<T>(Shape{1, ch, 1, 1}, T(0)));
    return n;
}

template <typename T>
typename SUNet<T>::Linear SUNet<T>::make_linear(const std::string& name, int in, int out, Rng& rng) {
    Linear l;
    l.w = params_.add(name + ".w", nn::uniform_init<T>(Shape{in, out}, in, rng));
    l.b = params_.add(name + ".b", nn::uniform_init<T>(Shape{out}, in, rng));
    return l;
}

template <typename T>
typename SUNet<T>::ResBlock SUNet<T>::make_res(const std::string& name, int in_ch, int out_ch, Rng& rng) {
    ResBlock r;
    r.in_ch = in_ch;
    r.out_ch = out_ch;
    r.z_proj = make_linear(name + ".z_proj", config_.resolved_z_width(), in_ch, rng);
    r.norm1 = make_norm(name + ".norm1", in_ch);
    r.conv1 = make_conv(name + ".conv1", in_ch, out_ch, 3, 1, 1, rng);
    r.norm2 = make_norm(name + ".norm2", out_ch);
    r.conv2 = make_conv(name + ".conv2", out_ch, out_ch, 3, 1, 1, rng);
    if (in_ch != out_ch) r.skip = make_conv(name + ".skip", in_ch, out_ch, 1, 1, 0, rng);
    return r;
}

template <typename T>
SUNet<T>::SUNet(SUNetConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    const int d = config_.embedding_dim;
    const int zw = config_.resolved_z_width();
    table_ = params_.add("item_embedding", nn::normal_init<T>(Shape{config_.num_items + 1, d}, 1.0, rng));
    z_in_ = make_linear("z_mlp.0", d, zw, rng);
    z_out_ = make_linear("z_mlp.1", zw, zw, rng);
    conv_in_ = make_conv("conv_in", config_.augment_length, config_.base_width, 3, 1, 1, rng);

    std::vector<int> skip_widths;
    int ch = config_.base_width;
    down_.resize(static_cast<std::size_t>(config_.levels));
    for (int l = 0; l < config_.levels; ++l) {
        const int width = config_.level_width(l);
        for (int b = 0; b < config_.num_res_blocks; ++b) {
            down_[l].push_back(make_res("down." + std::to_string(l) + "." + std::to_string(b), ch, width, rng));
            ch = width;
            skip_widths.push_back(ch);
        }
        if (l + 1 < config_.levels) downsample_.push_back(make_conv("down." + std::to_string(l) + ".ds", ch, ch, 3, 2, 1, rng));
    }
    mid_res_ = make_res("mid.res", ch, ch, rng);
    mid_attn_.norm = make_norm("mid.attn.norm", ch);
    mid_attn_.q = make_conv("mid.attn.q", ch, ch, 1, 1, 0, rng);
    mid_attn_.k = make_conv("mid.attn.k", ch, ch, 1, 1, 0, rng);
    mid_attn_.v = make_conv("mid.attn.v", ch, ch, 1, 1, 0, rng);
    mid_attn_.out = make_conv("mid.attn.out", ch, ch, 1, 1, 0, rng);

    up_.resize(static_cast<std::size_t>(config_.levels));
    upsample_.resize(static_cast<std::size_t>(config_.levels));
    for (int l = config_.levels - 1; l >= 0; --l) {
        const int width = config_.level_width(l);
        for (int b = 0; b < config_.num_res_blocks; ++b) {
            const int skip = skip_widths.back();
            skip_widths.pop_back();
            up_[l].push_back(make_res("up." + std::to_string(l) + "." + std::to_string(b), ch + skip, width, rng));
            ch = width;
        }
        if (l > 0) upsample_[l] = make_conv("up." + std::to_string(l) + ".us", ch, ch, 3, 1, 1, rng);
    }
    out_norm_ = make_norm("out.norm", ch);
    conv_out_ = make_conv("conv_out", ch, config_.augment_length, 3, 1, 1, rng);
}

template <typename T>
Var<T> SUNet<T>::apply(const Conv& c, const Var<T>& x) const {
    return nn::conv2d(x, c.w, c.b, c.stride, c.padding);
}

template <typename T>
Var<T> SUNet<T>::apply(const Norm& n, const Var<T>& x) const {
    return nn::add(nn::mul(nn::normalize(x, 1), n.gain), n.bias);
}

template <typename T>
Var<T> SUNet<T>::apply(const Linear& l, const Var<T>& x) const {
    return nn::add(nn::matmul(x, l.w), l.b);
}

template <typename T>
Var<T> SUNet<T>::apply(const ResBlock& r, const Var<T>& x, const Var<T>& z, bool train, Rng* rng) const {
    const std::int64_t n = x.dim(0);
    Var<T> zp = nn::reshape(apply(r.z_proj, z), Shape{n, r.in_ch, 1, 1});
    Var<T> h = nn::add(x, zp);
    h = apply(r.conv1, nn::silu(apply(r.norm1, h)));
    h = nn::dropout(nn::silu(apply(r.norm2, h)), config_.dropout, train, rng);
    h = apply(r.conv2, h);
    Var<T> skip = r.in_ch == r.out_ch ? x : apply(r.skip, x);
    return nn::add(skip, h);
}

template <typename T>
Var<T> SUNet<T>::apply(const AttnBlock& a, const Var<T>& x) const {
    const std::int64_t n = x.dim(0), ch = x.dim(1), hh = x.dim(2), ww = x.dim(3);
    Var<T> hn = apply(a.norm, x);
    Var<T> q = nn::reshape(apply(a.q, hn), Shape{n, ch, hh * ww});
    Var<T> k = nn::reshape(apply(a.k, hn), Shape{n, ch, hh * ww});
    Var<T> v = nn::reshape(apply(a.v, hn), Shape{n, ch, hh * ww});
    Var<T> scores = nn::bmm(nn::permute(q, {0, 2, 1}), k);  // [N, HW, HW]
    Var<T> attn = nn::softmax(nn::scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(ch)))));
    Var<T> mixed = nn::bmm(v, attn, true);  // [N, C, HW]
    return nn::add(x, apply(a.out, nn::reshape(mixed, Shape{n, ch, hh, ww})));
}

template <typename T>
Var<T> SUNet<T>::condition(const std::vector<std::vector<std::int64_t>>& raw_items) const {
    std::vector<std::vector<std::int64_t>> bags = raw_items;
    for (auto& bag : bags) {
        if (bag.empty()) bag.push_back(0);
        for (auto id : bag)
            if (id < 0 || id > config_.num_items)
                throw ParameterError("item id " + std::to_string(id) + " outside [0, " +
                                     std::to_string(config_.num_items) + "]");
    }
    return nn::embedding_bag_mean(table_, bags);
}

template <typename T>
Var<T> SUNet<T>::forward(const Var<T>& x_t, const std::vector<int>& steps, const Var<T>& c, bool train,
                         Rng* rng) const {
    const int m = config_.augment_length, d = config_.embedding_dim, s = config_.side();
    if (x_t.value().rank() != 3 || x_t.dim(1) != m || x_t.dim(2) != d)
        throw ShapeError("SU-Net input must be [N, " + std::to_string(m) + ", " + std::to_string(d) + "], got " +
                         nn::shape_str(x_t.shape()));
    const std::int64_t n = x_t.dim(0);
    if (static_cast<std::int64_t>(steps.size()) != n || c.shape() != Shape{n, d})
        throw ShapeError("SU-Net: " + std::to_string(steps.size()) + " steps and condition " +
                         nn::shape_str(c.shape()) + " for batch of " + std::to_string(n));

    Tensor<T> temb(Shape{n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto e = sinusoidal_step_embedding(steps[static_cast<std::size_t>(i)], d);
        for (int j = 0; j < d; ++j) temb[i * d + j] = static_cast<T>(e[static_cast<std::size_t>(j)]);
    }
    Var<T> z = nn::add(c, nn::constant(std::move(temb)));
    z = nn::silu(apply(z_out_, nn::silu(apply(z_in_, z))));

    Var<T> h = apply(conv_in_, nn::reshape(x_t, Shape{n, m, s, s}));
    std::vector<Var<T>> skips;
    for (int l = 0; l < config_.levels; ++l) {
        for (const auto& block : down_[static_cast<std::size_t>(l)]) {
            h = apply(block, h, z, train, rng);
            skips.push_back(h);
        }
        if (l + 1 < config_.levels) h = apply(downsample_[static_cast<std::size_t>(l)], h);
    }
    h = apply(mid_attn_, apply(mid_res_, h, z, train, rng));
    for (int l = config_.levels - 1; l >= 0; --l) {
        for (const auto& block : up_[static_cast<std::size_t>(l)]) {
            h = nn::concat(h, skips.back(), 1);
            skips.pop_back();
            h = apply(block, h, z, train, rng);
        }
        if (l > 0) h = apply(upsample_[static_cast<std::size_t>(l)], nn::upsample_nearest2x(h));
    }
    h = apply(conv_out_, nn::silu(apply(out_norm_, h)));
    return nn::reshape(h, Shape{n, m, d});
}

template class SUNet<float>;
template class SUNet<double>;

}  // namespace diffuasr
