#include "diffuasr/diffusion.hpp"

#include <cmath>
#include <limits>

namespace diffuasr {

using nn::Shape;
using nn::Tensor;
using nn::Var;

std::string to_string(GuidanceStrategy s) {
    switch (s) {
        case GuidanceStrategy::kNone: return "none";
        case GuidanceStrategy::kClassifierFree: return "classifier_free";
        case GuidanceStrategy::kClassifierGuide: return "classifier_guide";
    }
    return "?";
}

GuidanceStrategy parse_guidance_strategy(const std::string& name) {
    if (name == "none") return GuidanceStrategy::kNone;
    if (name == "classifier_free" || name == "cf") return GuidanceStrategy::kClassifierFree;
    if (name == "classifier_guide" || name == "cg") return GuidanceStrategy::kClassifierGuide;
    throw ParameterError("unknown guidance strategy '" + name + "' (none, classifier_free, classifier_guide)");
}

namespace {

void check_step(const NoiseSchedule& sched, int t) {
    if (t < 1 || t > sched.steps)
        throw ParameterError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(sched.steps));
}


template <typename T>
std::int64_t rows_of(const Tensor<T>& x, const std::vector<int>& steps, const char* who) {
    if (x.rank() < 1 || x.dim(0) != static_cast<std::int64_t>(steps.size()))
        throw ShapeError(std::string(who) + ": " + std::to_string(steps.size()) + " steps for shape " +
                         nn::shape_str(x.shape()));
    return x.numel() / std::max<std::int64_t>(1, x.dim(0));
}

}  // namespace

template <typename T>
Tensor<T> forward_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape())
        throw ShapeError("forward_sample: x0 " + nn::shape_str(x0.shape()) + " vs eps " + nn::shape_str(eps.shape()));
    check_step(sched, t);
    const double a = std::sqrt(sched.alpha_bar_at(t)), b = std::sqrt(1.0 - sched.alpha_bar_at(t));
    Tensor<T> out(x0.shape());
    for (std::int64_t i = 0; i < x0.numel(); ++i)
        out[i] = static_cast<T>(a * static_cast<double>(x0[i]) + b * static_cast<double>(eps[i]));
    return out;
}

template <typename T>
Tensor<T> forward_sample(const Tensor<T>& x0, const std::vector<int>& steps, const Tensor<T>& eps,
                         const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape())
        throw ShapeError("forward_sample: x0 " + nn::shape_str(x0.shape()) + " vs eps " + nn::shape_str(eps.shape()));
    const auto per = rows_of(x0, steps, "forward_sample");
    Tensor<T> out(x0.shape());
    for (std::size_t r = 0; r < steps.size(); ++r) {
        check_step(sched, steps[r]);
        const double a = std::sqrt(sched.alpha_bar_at(steps[r])), b = std::sqrt(1.0 - sched.alpha_bar_at(steps[r]));
        const auto base = static_cast<std::int64_t>(r) * per;
        for (std::int64_t i = base; i < base + per; ++i)
            out[i] = static_cast<T>(a * static_cast<double>(x0[i]) + b * static_cast<double>(eps[i]));
    }
    return out;
}

template <typename T>
Var<T> denoising_loss(const NoisePredictor<T>& predictor, const Var<T>& x0, const Var<T>& c,
                      const std::vector<int>& steps, const Tensor<T>& eps, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape())
        throw ShapeError("denoising_loss: x0 " + nn::shape_str(x0.shape()) + " vs eps " + nn::shape_str(eps.shape()));
    const auto n = static_cast<std::int64_t>(steps.size());
    if (x0.value().rank() < 1 || x0.dim(0) != n)
        throw ShapeError("denoising_loss: " + std::to_string(n) + " steps for x0 " + nn::shape_str(x0.shape()));
    Shape coef_shape(static_cast<std::size_t>(x0.value().rank()), 1);
    coef_shape[0] = n;
    Tensor<T> signal(coef_shape), noise(coef_shape);
    for (std::int64_t i = 0; i < n; ++i) {
        const int t = steps[static_cast<std::size_t>(i)];
        check_step(sched, t);
        signal[i] = static_cast<T>(std::sqrt(sched.alpha_bar_at(t)));
        noise[i] = static_cast<T>(std::sqrt(1.0 - sched.alpha_bar_at(t)));
    }
    const Var<T> eps_v = nn::constant(eps);
    Var<T> x_t = nn::add(nn::mul(x0, nn::constant(std::move(signal))), nn::mul(eps_v, nn::constant(std::move(noise))));
    return nn::mse(predictor(x_t, steps, c), eps_v);
}

template <typename T>
Var<T> training_loss(const SUNet<T>& net, const std::vector<ItemSeq>& targets, const std::vector<ItemSeq>& raw,
                     const NoiseSchedule& sched, Rng& rng, const DiffusionLossOptions& options) {
    if (targets.empty() || targets.size() != raw.size())
        throw ShapeError("training_loss: " + std::to_string(targets.size()) + " targets vs " +
                         std::to_string(raw.size()) + " raw sequences");
    const auto& cfg = net.config();
    const auto n = static_cast<std::int64_t>(targets.size());
    std::vector<std::int64_t> ids;
    for (const auto& t : targets) {
        if (static_cast<int>(t.size()) != cfg.augment_length)
            throw ShapeError("training_loss: target of length " + std::to_string(t.size()) + ", expected M = " +
                             std::to_string(cfg.augment_length));
        ids.insert(ids.end(), t.begin(), t.end());
    }
    std::vector<int> steps(static_cast<std::size_t>(n));
    for (auto& t : steps) t = static_cast<int>(rng.uniform_int(1, sched.steps));
    Tensor<T> eps(Shape{n, cfg.augment_length, cfg.embedding_dim});
    for (auto& e : eps.data()) e = static_cast<T>(rng.normal());
    std::vector<ItemSeq> cond = raw;
    for (auto& c : cond)
        if (options.p_uncond > 0.0 && rng.bernoulli(options.p_uncond)) c.clear();

    Var<T> x0 = nn::embedding(net.item_embedding(), ids, Shape{n, cfg.augment_length});
    if (options.detach_targets) x0 = nn::constant(x0.value());
    const Var<T> c = net.condition(cond);
    NoisePredictor<T> predictor = [&](const Var<T>& x_t, const std::vector<int>& s, const Var<T>& cv) {
        return net.forward(x_t, s, cv, options.train, &rng);
    };
    return denoising_loss(predictor, x0, c, steps, eps, sched);
}

template <typename T>
Tensor<T> classifier_free_combine(const Tensor<T>& cond, const Tensor<T>& uncond, double gamma) {
    if (cond.shape() != uncond.shape())
        throw ShapeError("classifier_free_combine: " + nn::shape_str(cond.shape()) + " vs " +
                         nn::shape_str(uncond.shape()));
    const T g = static_cast<T>(gamma);
    Tensor<T> out(cond.shape());
    for (std::int64_t i = 0; i < cond.numel(); ++i) out[i] = cond[i] + g * (cond[i] - uncond[i]);
    return out;
}

template <typename T>
Tensor<T> classifier_guide_combine(const Tensor<T>& cond, const Tensor<T>& grad, const std::vector<int>& steps,
                                   double gamma, const NoiseSchedule& sched) {
    if (cond.shape() != grad.shape())
        throw ShapeError("classifier_guide_combine: " + nn::shape_str(cond.shape()) + " vs " +
                         nn::shape_str(grad.shape()));
    const auto per = rows_of(cond, steps, "classifier_guide_combine");
    Tensor<T> out(cond.shape());
    for (std::size_t r = 0; r < steps.size(); ++r) {
        check_step(sched, steps[r]);
        const T k = static_cast<T>(gamma * std::sqrt(1.0 - sched.alpha_bar_at(steps[r])));
        const auto base = static_cast<std::int64_t>(r) * per;
        for (std::int64_t i = base; i < base + per; ++i) out[i] = cond[i] - k * grad[i];
    }
    return out;
}

namespace {

template <typename T>
Var<T> target_log_sigmoid(const Var<T>& logits, const ItemSeq& targets) {
    const std::int64_t n = logits.dim(0), cols = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n)
        throw ShapeError("classifier: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
    Tensor<T> onehot(Shape{n, cols});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto v = targets[static_cast<std::size_t>(i)];
        if (v < 1 || v >= cols) throw ParameterError("classifier: target item " + std::to_string(v) + " out of range");
        onehot[i * cols + v] = T(1);
    }
    return nn::log_sigmoid(nn::sum_last(nn::mul(logits, nn::constant(std::move(onehot)))));
}

}  // namespace

template <typename T>
Tensor<T> classifier_log_likelihood_grad(const SrsModel<T>& classifier, const Tensor<T>& x, const ItemSeq& targets,
                                         std::vector<double>* loglik) {
    const Var<T> input(x, true);
    const Var<T> ll = target_log_sigmoid(classifier.score_next_embeddings(input), targets);
    if (loglik) {
        loglik->clear();
        for (auto v : ll.value().data()) loglik->push_back(static_cast<double>(v));
    }
    return nn::grad(nn::sum(ll), {input}).front();
}

template <typename T>
std::vector<double> classifier_log_likelihood(const SrsModel<T>& classifier, const std::vector<ItemSeq>& histories,
                                              const ItemSeq& targets) {
    nn::NoGradGuard no_grad;
    const Var<T> ll = target_log_sigmoid(classifier.score_next(histories), targets);
    std::vector<double> out;
    for (auto v : ll.value().data()) out.push_back(static_cast<double>(v));
    return out;
}

template <typename T>
Tensor<T> guide_noise(const SUNet<T>& net, const Tensor<T>& x_t, const std::vector<int>& steps,
                      const std::vector<ItemSeq>& raw, const Guidance<T>& guidance, const NoiseSchedule& sched) {
    if (guidance.gamma < 0.0) throw ParameterError("guidance scale must be >= 0");
    if (guidance.strategy == GuidanceStrategy::kClassifierGuide && !guidance.classifier)
        throw ParameterError("classifier guidance needs a pretrained classifier");
    const auto n = static_cast<std::int64_t>(raw.size());
    if (x_t.rank() != 3 || x_t.dim(0) != n)
        throw ShapeError("guide_noise: " + std::to_string(n) + " raw sequences for state " + nn::shape_str(x_t.shape()));
    for (const auto& r : raw)
        if (r.empty()) throw ParameterError("guide_noise: empty raw sequence");

    nn::NoGradGuard no_grad;
    if (guidance.strategy == GuidanceStrategy::kClassifierFree) {
        // Conditional and padding-conditioned rows go through one batched pass.
        std::vector<ItemSeq> bags = raw;
        bags.resize(static_cast<std::size_t>(2 * n));
        std::vector<int> both = steps;
        both.insert(both.end(), steps.begin(), steps.end());
        Tensor<T> xx(Shape{2 * n, x_t.dim(1), x_t.dim(2)});
        std::copy(x_t.ptr(), x_t.ptr() + x_t.numel(), xx.ptr());
        std::copy(x_t.ptr(), x_t.ptr() + x_t.numel(), xx.ptr() + x_t.numel());
        const Tensor<T> out = net.forward(nn::constant(std::move(xx)), both, net.condition(bags)).value();
        const Shape half{n, x_t.dim(1), x_t.dim(2)};
        Tensor<T> cond(half, std::vector<T>(out.ptr(), out.ptr() + x_t.numel()));
        Tensor<T> uncond(half, std::vector<T>(out.ptr() + x_t.numel(), out.ptr() + 2 * x_t.numel()));
        return classifier_free_combine(cond, uncond, guidance.gamma);
    }
    Tensor<T> cond = net.forward(nn::constant(x_t), steps, net.condition(raw)).value();
    if (guidance.strategy == GuidanceStrategy::kNone || guidance.gamma == 0.0) return cond;
    ItemSeq first;
    for (const auto& r : raw) first.push_back(r.front());
    Tensor<T> g;
    {
        nn::GradModeGuard enable(true);
        g = classifier_log_likelihood_grad(*guidance.classifier, x_t, first);
    }
    return classifier_guide_combine(cond, g, steps, guidance.gamma, sched);
}

template <typename T>
void reverse_step_row(const T* x_t, const T* eps_hat, const T* zeta, std::int64_t n, int t, const NoiseSchedule& sched,
                      T* out, bool zero_sigma) {
    check_step(sched, t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(t));
    const double eps_coef = sched.beta_at(t) / std::sqrt(1.0 - sched.alpha_bar_at(t));
    const double sigma = (t > 1 && !zero_sigma) ? std::sqrt(sigma2_at(sched, t)) : 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double v = inv_sqrt_alpha * (static_cast<double>(x_t[i]) - eps_coef * static_cast<double>(eps_hat[i]));
        if (sigma > 0.0) v += sigma * static_cast<double>(zeta[i]);
        out[i] = static_cast<T>(v);
    }
}

template <typename T>
Tensor<T> reverse_step(const Tensor<T>& x_t, const std::vector<int>& steps, const Tensor<T>& eps_hat,
                       const Tensor<T>& zeta, const NoiseSchedule& sched, bool zero_sigma) {
    if (x_t.shape() != eps_hat.shape())
        throw ShapeError("reverse_step: x_t " + nn::shape_str(x_t.shape()) + " vs eps " +
                         nn::shape_str(eps_hat.shape()));
    const auto per = rows_of(x_t, steps, "reverse_step");
    bool need_zeta = false;
    std::vector<double> c1(steps.size()), c2(steps.size()), sd(steps.size());
    for (std::size_t r = 0; r < steps.size(); ++r) {
        const int t = steps[r];
        check_step(sched, t);
        c1[r] = 1.0 / std::sqrt(sched.alpha_at(t));
        c2[r] = sched.beta_at(t) / std::sqrt(1.0 - sched.alpha_bar_at(t));
        sd[r] = (t > 1 && !zero_sigma) ? std::sqrt(sigma2_at(sched, t)) : 0.0;
        need_zeta = need_zeta || sd[r] > 0.0;
    }
    if (need_zeta && zeta.shape() != x_t.shape())
        throw ShapeError("reverse_step: x_t " + nn::shape_str(x_t.shape()) + " vs zeta " + nn::shape_str(zeta.shape()));
    Tensor<T> out(x_t.shape());
#pragma omp parallel for if (x_t.numel() >= (1 << 16))
    for (std::int64_t i = 0; i < x_t.numel(); ++i) {
        const auto r = static_cast<std::size_t>(i / per);
        double v = c1[r] * (static_cast<double>(x_t[i]) - c2[r] * static_cast<double>(eps_hat[i]));
        if (sd[r] > 0.0) v += sd[r] * static_cast<double>(zeta[i]);
        out[i] = static_cast<T>(v);
    }
    return out;
}

template <typename T>
Tensor<T> sample(const SUNet<T>& net, const std::vector<ItemSeq>& raw, const Guidance<T>& guidance,
                 const NoiseSchedule& sched, std::vector<Rng>& streams, const SampleOptions& options) {
    if (streams.size() != raw.size())
        throw ShapeError("sample: " + std::to_string(streams.size()) + " RNG streams for " + std::to_string(raw.size()) +
                         " sequences");
    const auto& cfg = net.config();
    const auto n = static_cast<std::int64_t>(raw.size());
    const std::int64_t per = static_cast<std::int64_t>(cfg.augment_length) * cfg.embedding_dim;
    const Shape shape{n, cfg.augment_length, cfg.embedding_dim};
    Tensor<T> x(shape);
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t i = 0; i < per; ++i) x[r * per + i] = static_cast<T>(streams[static_cast<std::size_t>(r)].normal());
    Tensor<T> zeta(shape);
    for (int t = sched.steps; t >= 1; --t) {
        const std::vector<int> steps(static_cast<std::size_t>(n), t);
        const Tensor<T> eps_hat = guide_noise(net, x, steps, raw, guidance, sched);
        if (t > 1 && !options.zero_sigma)
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t i = 0; i < per; ++i)
                    zeta[r * per + i] = static_cast<T>(streams[static_cast<std::size_t>(r)].normal());
        x = reverse_step(x, steps, eps_hat, zeta, sched, options.zero_sigma);
    }
    return x;
}

template <typename T>
ItemSeq round_to_items(const Tensor<T>& x, const Tensor<T>& table, bool forbid_padding, RoundingStats* stats) {
    if (table.rank() != 2 || table.dim(0) < 1) throw ShapeError("round_to_items: table must be [V, d] and nonempty");
    const std::int64_t d = table.dim(1), vocab = table.dim(0);
    if (x.rank() < 1 || x.dim(-1) != d)
        throw ShapeError("round_to_items: rows " + nn::shape_str(x.shape()) + " vs table " + nn::shape_str(table.shape()));
    const std::int64_t first = forbid_padding ? 1 : 0;
    if (first >= vocab) throw ShapeError("round_to_items: table has no non-padding rows");
    std::vector<double> norms(static_cast<std::size_t>(vocab));
    for (std::int64_t v = 0; v < vocab; ++v) {
        double s = 0;
        for (std::int64_t j = 0; j < d; ++j) s += static_cast<double>(table[v * d + j]) * static_cast<double>(table[v * d + j]);
        norms[static_cast<std::size_t>(v)] = std::sqrt(s);
    }
    const std::int64_t rows = x.numel() / d;
    ItemSeq out(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x.ptr() + r * d;
        double xn = 0;
        for (std::int64_t j = 0; j < d; ++j) xn += static_cast<double>(xr[j]) * static_cast<double>(xr[j]);
        xn = std::sqrt(xn);
        const bool zero = xn == 0.0;
        if (zero && stats) ++stats->zero_norm_rows;
        std::int64_t best = first;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::int64_t v = first; v < vocab; ++v) {
            double dot = 0;
            for (std::int64_t j = 0; j < d; ++j) dot += static_cast<double>(xr[j]) * static_cast<double>(table[v * d + j]);
            const double ne = norms[static_cast<std::size_t>(v)];
            const double score = zero ? dot : (ne > 0.0 ? dot / (xn * ne) : 0.0);
            if (score > best_score) {
                best_score = score;
                best = v;
            }
        }
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

#define DIFFUASR_INSTANTIATE(T)                                                                                       \
    template Tensor<T> forward_sample<T>(const Tensor<T>&, int, const Tensor<T>&, const NoiseSchedule&);              \
    template Tensor<T> forward_sample<T>(const Tensor<T>&, const std::vector<int>&, const Tensor<T>&,                  \
                                         const NoiseSchedule&);                                                       \
    template Var<T> denoising_loss<T>(const NoisePredictor<T>&, const Var<T>&, const Var<T>&, const std::vector<int>&, \
                                      const Tensor<T>&, const NoiseSchedule&);                                        \
    template Var<T> training_loss<T>(const SUNet<T>&, const std::vector<ItemSeq>&, const std::vector<ItemSeq>&,       \
                                     const NoiseSchedule&, Rng&, const DiffusionLossOptions&);                        \
    template Tensor<T> classifier_free_combine<T>(const Tensor<T>&, const Tensor<T>&, double);                        \
    template Tensor<T> classifier_guide_combine<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<int>&, double, \
                                                   const NoiseSchedule&);                                             \
    template Tensor<T> classifier_log_likelihood_grad<T>(const SrsModel<T>&, const Tensor<T>&, const ItemSeq&,        \
                                                         std::vector<double>*);                                       \
    template std::vector<double> classifier_log_likelihood<T>(const SrsModel<T>&, const std::vector<ItemSeq>&,         \
                                                              const ItemSeq&);                                        \
    template Tensor<T> guide_noise<T>(const SUNet<T>&, const Tensor<T>&, const std::vector<int>&,                     \
                                      const std::vector<ItemSeq>&, const Guidance<T>&, const NoiseSchedule&);         \
    template void reverse_step_row<T>(const T*, const T*, const T*, std::int64_t, int, const NoiseSchedule&, T*, bool); \
    template Tensor<T> reverse_step<T>(const Tensor<T>&, const std::vector<int>&, const Tensor<T>&, const Tensor<T>&,  \
                                       const NoiseSchedule&, bool);                                                   \
    template Tensor<T> sample<T>(const SUNet<T>&, const std::vector<ItemSeq>&, const Guidance<T>&,                    \
                                 const NoiseSchedule&, std::vector<Rng>&, const SampleOptions&);                      \
    template ItemSeq round_to_items<T>(const Tensor<T>&, const Tensor<T>&, bool, RoundingStats*);

DIFFUASR_INSTANTIATE(float)
DIFFUASR_INSTANTIATE(double)
#undef DIFFUASR_INSTANTIATE

}  // namespace diffuasr
