#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffuasr/schedule.hpp"
#include "diffuasr/srs.hpp"
#include "diffuasr/sunet.hpp"

namespace diffuasr {

enum class GuidanceStrategy { kNone, kClassifierFree, kClassifierGuide };

std::string to_string(GuidanceStrategy s);
GuidanceStrategy parse_guidance_strategy(const std::string& name);

template <typename T>
struct Guidance {
    GuidanceStrategy strategy = GuidanceStrategy::kNone;
    double gamma = 0.0;
    const SrsModel<T>* classifier = nullptr;  ///< required for kClassifierGuide
};

/// x_t = √ᾱ_t·x0 + √(1-ᾱ_t)·ε for a single state of any shape.
template <typename T>
nn::Tensor<T> forward_sample(const nn::Tensor<T>& x0, int t, const nn::Tensor<T>& eps, const NoiseSchedule& sched);

/// Row-wise form: x0 and eps are [N, ...], steps[i] applies to row i.
template <typename T>
nn::Tensor<T> forward_sample(const nn::Tensor<T>& x0, const std::vector<int>& steps, const nn::Tensor<T>& eps,
                             const NoiseSchedule& sched);

template <typename T>
using NoisePredictor =
    std::function<nn::Var<T>(const nn::Var<T>& x_t, const std::vector<int>& steps, const nn::Var<T>& c)>;

/// mean ‖ε - ε_θ(x_t, t, c)‖² with given steps and noise; x0 is [N, M, d].
template <typename T>
nn::Var<T> denoising_loss(const NoisePredictor<T>& predictor, const nn::Var<T>& x0, const nn::Var<T>& c,
                          const std::vector<int>& steps, const nn::Tensor<T>& eps, const NoiseSchedule& sched);

struct DiffusionLossOptions {
    /// Probability of swapping a row's condition for the padding vector.
    double p_uncond = 0.0;
    /// Treat the target embeddings as constants; E then learns only through c.
    bool detach_targets = true;
    bool train = true;  ///< dropout on
};

/// One stochastic draw of the denoising objective over a batch of
/// (target items, raw items) pairs: t ~ U{1..T}, ε ~ N(0, I).
template <typename T>
nn::Var<T> training_loss(const SUNet<T>& net, const std::vector<ItemSeq>& targets, const std::vector<ItemSeq>& raw,
                         const NoiseSchedule& sched, Rng& rng, const DiffusionLossOptions& options = {});

/// ε_c + γ·(ε_c - ε_u): equals ε_c exactly at γ = 0 and whenever ε_c == ε_u.
template <typename T>
nn::Tensor<T> classifier_free_combine(const nn::Tensor<T>& cond, const nn::Tensor<T>& uncond, double gamma);

/// ε_c - γ·√(1-ᾱ_t)·∇ log p per row; grad has the shape of cond.
template <typename T>
nn::Tensor<T> classifier_guide_combine(const nn::Tensor<T>& cond, const nn::Tensor<T>& grad,
                                       const std::vector<int>& steps, double gamma, const NoiseSchedule& sched);

/// ∇_x log σ(φ(x)[v]) where x [N, M, d] is fed to φ as its input embedding
/// sequence and v = targets[i]. Row log-likelihoods go to `loglik` if given.
template <typename T>
nn::Tensor<T> classifier_log_likelihood_grad(const SrsModel<T>& classifier, const nn::Tensor<T>& x,
                                             const ItemSeq& targets, std::vector<double>* loglik = nullptr);

/// log σ(φ(history)[target]) per row, from item ids.
template <typename T>
std::vector<double> classifier_log_likelihood(const SrsModel<T>& classifier, const std::vector<ItemSeq>& histories,
                                              const ItemSeq& targets);

/// Guided noise estimate for x_t [N, M, d]. raw[i] supplies the condition
/// vector and, for classifier guidance, the target v_1 = raw[i].front().
template <typename T>
nn::Tensor<T> guide_noise(const SUNet<T>& net, const nn::Tensor<T>& x_t, const std::vector<int>& steps,
                          const std::vector<ItemSeq>& raw, const Guidance<T>& guidance, const NoiseSchedule& sched);

/// x_{t-1} = (x_t - β_t/√(1-ᾱ_t)·ε̂)/√α_t + σ_t·ζ; ζ is ignored at t = 1.
template <typename T>
nn::Tensor<T> reverse_step(const nn::Tensor<T>& x_t, const std::vector<int>& steps, const nn::Tensor<T>& eps_hat,
                           const nn::Tensor<T>& zeta, const NoiseSchedule& sched, bool zero_sigma = false);

/// Single-state reference of reverse_step over n contiguous values.
template <typename T>
void reverse_step_row(const T* x_t, const T* eps_hat, const T* zeta, std::int64_t n, int t, const NoiseSchedule& sched,
                      T* out, bool zero_sigma = false);

struct SampleOptions {
    bool zero_sigma = false;  ///< deterministic reverse chain given x_T
};

/// Runs the reverse chain from x_T ~ N(0, I) for every raw sequence. Row i
/// draws all of its noise from streams[i], so results do not depend on how
/// users are batched.
template <typename T>
nn::Tensor<T> sample(const SUNet<T>& net, const std::vector<ItemSeq>& raw, const Guidance<T>& guidance,
                     const NoiseSchedule& sched, std::vector<Rng>& streams, const SampleOptions& options = {});

struct RoundingStats {
    std::int64_t zero_norm_rows = 0;
};

/// Maps each d-row of x (any leading shape) to the item with the highest
/// cosine similarity in `table` [V+1, d]; ties go to the smallest id. A zero
/// row falls back to the dot-product argmax and is counted in `stats`.
template <typename T>
ItemSeq round_to_items(const nn::Tensor<T>& x, const nn::Tensor<T>& table, bool forbid_padding = true,
                       RoundingStats* stats = nullptr);

}  // namespace diffuasr
