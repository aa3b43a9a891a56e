#pragma once

#include <vector>

#include "diffuasr/module.hpp"
#include "json.hpp"

namespace diffuasr {

struct SUNetConfig {
    int augment_length = 6;  ///< M, the channel count of the input planes
    int embedding_dim = 64;  ///< d, must be a perfect square
    int num_items = 0;       ///< |V|; the item table has num_items + 1 rows
    int levels = 2;
    std::vector<int> channel_mult{1, 2};
    int base_width = 32;
    int num_res_blocks = 2;
    int z_width = 0;  ///< width of the shared z MLP; 0 means 4 * base_width
    double dropout = 0.0;

    /// √d; throws when d is not a perfect square.
    int side() const;
    int level_width(int level) const { return base_width * channel_mult.at(static_cast<std::size_t>(level)); }
    int resolved_z_width() const { return z_width > 0 ? z_width : 4 * base_width; }
    void validate() const;

    nlohmann::json to_json() const;
    static SUNetConfig from_json(const nlohmann::json& j);
};

/// Transformer-style sinusoidal code of step t: sin(t·ω_k) for the first half,
/// cos(t·ω_k) for the second, ω_k = 10000^(-2k/dim).
std::vector<double> sinusoidal_step_embedding(int t, int dim);

/// Noise predictor ε_θ(x_t, t, c) together with the item-embedding table E
/// (row 0 is the trainable padding vector).
///
/// Each length-d embedding is folded into a √d×√d plane and the M sequence
/// positions become input channels. z = c + emb(t) goes through a shared
/// two-layer MLP and is projected into every resnet block, where it is added
/// to the block input before the first convolution.
template <typename T>
class SUNet {
   public:
    SUNet(SUNetConfig config, Rng& rng);

    const SUNetConfig& config() const { return config_; }
    nn::ParameterSet<T>& params() { return params_; }
    const nn::ParameterSet<T>& params() const { return params_; }

    nn::Var<T> item_embedding() const { return table_; }

    /// Condition vectors [N, d]: mean embedding of each raw item list. An empty
    /// list selects the padding vector E[0] (the unconditional branch).
    nn::Var<T> condition(const std::vector<std::vector<std::int64_t>>& raw_items) const;

    /// x_t [N, M, d], one step per row, c [N, d] -> predicted noise [N, M, d].
    nn::Var<T> forward(const nn::Var<T>& x_t, const std::vector<int>& steps, const nn::Var<T>& c,
                       bool train = false, Rng* rng = nullptr) const;

   private:
    struct Conv {
        nn::Var<T> w, b;
        std::int64_t stride = 1, padding = 1;
    };
    struct Norm {
        nn::Var<T> gain, bias;
    };
    struct Linear {
        nn::Var<T> w, b;
    };
    struct ResBlock {
        int in_ch = 0, out_ch = 0;
        Linear z_proj;
        Norm norm1, norm2;
        Conv conv1, conv2;
        Conv skip;  // 1x1, only when in_ch != out_ch
    };
    struct AttnBlock {
        Norm norm;
        Conv q, k, v, out;
    };

    Conv make_conv(const std::string& name, int in_ch, int out_ch, int kernel, int stride, int padding, Rng& rng);
    Norm make_norm(const std::string& name, int ch);
    Linear make_linear(const std::string& name, int in, int out, Rng& rng);
    ResBlock make_res(const std::string& name, int in_ch, int out_ch, Rng& rng);

    nn::Var<T> apply(const Conv& c, const nn::Var<T>& x) const;
    nn::Var<T> apply(const Norm& n, const nn::Var<T>& x) const;
    nn::Var<T> apply(const Linear& l, const nn::Var<T>& x) const;
    nn::Var<T> apply(const ResBlock& r, const nn::Var<T>& x, const nn::Var<T>& z, bool train, Rng* rng) const;
    nn::Var<T> apply(const AttnBlock& a, const nn::Var<T>& x) const;

    SUNetConfig config_;
    nn::ParameterSet<T> params_;
    nn::Var<T> table_;
    Linear z_in_, z_out_;
    Conv conv_in_;
    std::vector<std::vector<ResBlock>> down_;
    std::vector<Conv> downsample_;
    ResBlock mid_res_;
    AttnBlock mid_attn_;
    std::vector<std::vector<ResBlock>> up_;  // indexed by level
    std::vector<Conv> upsample_;             // upsample_[l] lifts level l to l-1
    Norm out_norm_;
    Conv conv_out_;
};

}  // namespace diffuasr
