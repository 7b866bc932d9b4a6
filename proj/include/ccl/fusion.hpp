#pragma once

// Transformer fusion of a learnable class token with the knowledge
// components, discrete hazards, survival function and the censored NLL.

#include <ccl/genomics_encoder.hpp>
#include <ccl/parameters.hpp>

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace ccl {

inline constexpr double kHazardClamp = 1e-7;

struct TransformerConfig {
    Index dim = kModelDim;
    int heads = 4;
    int layers = 2;
    Index ff_dim = 512;
};

// Pre-norm encoder layer: x + MHA(LN(x)), then x + FF(LN(x)).
class TransformerEncoderLayer {
   public:
    TransformerEncoderLayer() = default;
    TransformerEncoderLayer(ParameterStore& store, const std::string& prefix, const TransformerConfig& cfg,
                            std::mt19937_64& rng)
        : heads_(cfg.heads),
          ln_attn_(store, prefix + ".ln_attn", cfg.dim),
          query_(store, prefix + ".attn.query", cfg.dim, cfg.dim, rng, Init::Xavier),
          key_(store, prefix + ".attn.key", cfg.dim, cfg.dim, rng, Init::Xavier),
          value_(store, prefix + ".attn.value", cfg.dim, cfg.dim, rng, Init::Xavier),
          out_(store, prefix + ".attn.out", cfg.dim, cfg.dim, rng, Init::Xavier),
          ln_ff_(store, prefix + ".ln_ff", cfg.dim),
          ff1_(store, prefix + ".ff1", cfg.dim, cfg.ff_dim, rng),
          ff2_(store, prefix + ".ff2", cfg.ff_dim, cfg.dim, rng) {
        if (cfg.heads < 1 || cfg.dim % cfg.heads != 0) {
            throw DimensionError("transformer: dim " + std::to_string(cfg.dim) + " not divisible by " +
                                 std::to_string(cfg.heads) + " heads");
        }
    }

    // With first_row_only, just the first output row is produced; keys and
    // values still see every token.
    Tensor operator()(const Tensor& x, bool first_row_only = false) const {
        const Tensor h = ln_attn_(x);
        const Tensor q = first_row_only ? query_(slice_rows(h, 0, 1)) : query_(h);
        const Tensor k = key_(h);
        const Tensor v = value_(h);
        const Index head_dim = x.cols() / heads_;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
        std::vector<Tensor> heads;
        heads.reserve(static_cast<std::size_t>(heads_));
        for (int i = 0; i < heads_; ++i) {
            const Tensor qh = slice_cols(q, i * head_dim, head_dim);
            const Tensor kh = slice_cols(k, i * head_dim, head_dim);
            const Tensor vh = slice_cols(v, i * head_dim, head_dim);
            const Tensor weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
            heads.push_back(matmul(weights, vh));
        }
        const Tensor x1 = add(first_row_only ? slice_rows(x, 0, 1) : x, out_(concat_cols(heads)));
        return add(x1, ff2_(selu(ff1_(ln_ff_(x1)))));
    }

   private:
    int heads_ = 4;
    LayerNorm ln_attn_;
    Linear query_, key_, value_, out_;
    LayerNorm ln_ff_;
    Linear ff1_, ff2_;
};

struct HazardPrediction {
    Tensor hazards;  // 1 x n, each in [1e-7, 1 - 1e-7]

    std::vector<double> values() const {
        std::vector<double> h(static_cast<std::size_t>(hazards.cols()));
        for (Index j = 0; j < hazards.cols(); ++j) h[static_cast<std::size_t>(j)] = hazards.value()(0, j);
        return h;
    }
};

// Class token U is prepended to the given tokens; no positional encoding.
class FusionHead {
   public:
    FusionHead() = default;
    FusionHead(ParameterStore& store, int bins, std::mt19937_64& rng, const TransformerConfig& cfg = {},
               const std::string& prefix = "fusion") {
        if (bins < 1) throw ConfigError("fusion: bins_n must be >= 1");
        class_token_ = store.add(prefix + ".class_token", init::normal(1, cfg.dim, 0.02, rng));
        for (int l = 0; l < cfg.layers; ++l) {
            layers_.emplace_back(store, prefix + ".layer" + std::to_string(l), cfg, rng);
        }
        final_norm_ = LayerNorm(store, prefix + ".ln_final", cfg.dim);
        head_ = Linear(store, prefix + ".hazard", cfg.dim, bins, rng, Init::Xavier);
    }

    HazardPrediction operator()(const std::vector<Tensor>& tokens) const {
        std::vector<Tensor> seq;
        seq.reserve(tokens.size() + 1);
        seq.push_back(class_token_);
        for (const auto& t : tokens) {
            if (t.rows() != 1 || t.cols() != class_token_.cols()) {
                throw DimensionError("fusion: token shape " + t.shape() + ", expected 1x" +
                                     std::to_string(class_token_.cols()));
            }
            seq.push_back(t);
        }
        // Only the class token's final state is read out.
        Tensor x = concat_rows(seq);
        for (std::size_t l = 0; l < layers_.size(); ++l) x = layers_[l](x, l + 1 == layers_.size());
        const Tensor cls = final_norm_(x.rows() == 1 ? x : slice_rows(x, 0, 1));
        return {clamp(sigmoid(head_(cls)), kHazardClamp, 1.0 - kHazardClamp)};
    }

    int bins() const { return static_cast<int>(head_.out_features()); }
    const Tensor& class_token() const { return class_token_; }

   private:
    Tensor class_token_;
    std::vector<TransformerEncoderLayer> layers_;
    LayerNorm final_norm_;
    Linear head_;
};

// prod_{j<=kappa} (1 - h_j); 1 for kappa = 0.
inline double survival_function(const std::vector<double>& hazards, int kappa) {
    if (kappa < 0 || kappa > static_cast<int>(hazards.size())) {
        throw ContractError("survival_function: kappa " + std::to_string(kappa) + " outside 0.." +
                            std::to_string(hazards.size()));
    }
    double s = 1.0;
    for (int j = 0; j < kappa; ++j) s *= 1.0 - hazards[static_cast<std::size_t>(j)];
    return s;
}

// -c log f(H, kappa) - (1-c) log f(H, kappa-1) - (1-c) log h_kappa, c = 1 censored.
inline Tensor nll_loss(const Tensor& hazards, int censor, int kappa) {
    const int n = static_cast<int>(hazards.cols());
    if (hazards.rows() != 1) throw DimensionError("nll_loss: hazards must be 1xn, got " + hazards.shape());
    if (censor != 0 && censor != 1) throw ContractError("nll_loss: censor must be 0 or 1");
    if (kappa < 1 || kappa > n) {
        throw ContractError("nll_loss: time bin " + std::to_string(kappa) + " outside 1.." + std::to_string(n));
    }
    const Tensor log_surv = log(1.0 - hazards);
    if (censor == 1) return -sum(slice_cols(log_surv, 0, kappa));
    const Tensor event = -log(slice_cols(hazards, kappa - 1, 1));
    if (kappa == 1) return event;
    return sub(event, sum(slice_cols(log_surv, 0, kappa - 1)));
}

// Higher is riskier: the negated sum of the survival function over all bins.
inline double risk_score(const std::vector<double>& hazards) {
    double s = 1.0;
    double total = 0.0;
    for (double h : hazards) {
        s *= 1.0 - h;
        total += s;
    }
    return -total;
}

inline Tensor total_loss(const Tensor& surv, const Tensor& cohort, double alpha) {
    return add(surv, scale(cohort, alpha));
}

}  // namespace ccl
