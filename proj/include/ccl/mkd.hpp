#pragma once

// Multimodal knowledge decomposition: (F_g, F_p) -> genomic-specific G,
// pathology-specific P, common C and synergistic S.

#include <ccl/genomics_encoder.hpp>
#include <ccl/parameters.hpp>

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ccl {

// Which co-attention encoders exist. Extra encoders carry no similarity
// constraint of their own.
enum class EncoderLayout { CommonOnly, SynergisticOnly, Both, BothPlusOne, BothPlusThree };

inline EncoderLayout parse_encoder_layout(const std::string& s) {
    if (s == "1_common" || s == "common") return EncoderLayout::CommonOnly;
    if (s == "1_synergistic" || s == "synergistic") return EncoderLayout::SynergisticOnly;
    if (s == "2") return EncoderLayout::Both;
    if (s == "3") return EncoderLayout::BothPlusOne;
    if (s == "5") return EncoderLayout::BothPlusThree;
    throw ConfigError("unknown encoder count '" + s + "' (expected 1_common, 1_synergistic, 2, 3 or 5)");
}

inline std::string to_string(EncoderLayout layout) {
    switch (layout) {
        case EncoderLayout::CommonOnly:
            return "1_common";
        case EncoderLayout::SynergisticOnly:
            return "1_synergistic";
        case EncoderLayout::Both:
            return "2";
        case EncoderLayout::BothPlusOne:
            return "3";
        case EncoderLayout::BothPlusThree:
            return "5";
    }
    return "2";
}

inline bool has_common(EncoderLayout l) { return l != EncoderLayout::SynergisticOnly; }
inline bool has_synergistic(EncoderLayout l) { return l != EncoderLayout::CommonOnly; }
inline int extra_encoders(EncoderLayout l) {
    return l == EncoderLayout::BothPlusOne ? 1 : l == EncoderLayout::BothPlusThree ? 3 : 0;
}

// Two-layer MLP: 256 -> 256 (SELU) -> 256.
class SpecificEncoder {
   public:
    SpecificEncoder() = default;
    SpecificEncoder(ParameterStore& store, const std::string& prefix, std::mt19937_64& rng, Index dim = kModelDim)
        : fc1_(store, prefix + ".fc1", dim, dim, rng), fc2_(store, prefix + ".fc2", dim, dim, rng) {}

    Tensor operator()(const Tensor& x) const {
        if (x.rows() < 1 || x.cols() != fc1_.in_features()) {
            throw DimensionError("specific encoder: expected 1x" + std::to_string(fc1_.in_features()) + ", got " +
                                 x.shape());
        }
        return fc2_(selu(fc1_(x)));
    }

   private:
    Linear fc1_;
    Linear fc2_;
};

struct CoAttentionOutput {
    Tensor fused;   // 1 x d
    Tensor gate_p;  // 1 x d, multiplies F_p
    Tensor gate_g;     // 1 x d, multiplies F_g
};

// A = fc(F_p)^T fc(F_g); a shared d->1 map (w, b) reduces the columns of A^T
// into the pathology gate and the columns of A into the genomics gate.
// Output = gate_p * F_p + gate_g * F_g (elementwise).
// A is rank one, so the gates are formed from its factors: w A^T = (w.u_g) u_p
// and w A = (w.u_p) u_g, where u_p = fc(F_p), u_g = fc(F_g). Stacked inputs
// are handled row by row.
class CoAttentionEncoder {
   public:
    CoAttentionEncoder() = default;
    CoAttentionEncoder(ParameterStore& store, const std::string& prefix, std::mt19937_64& rng, Index dim = kModelDim)
        : fc_(store, prefix + ".fc", dim, dim, rng) {
        reduce_weight_ = store.add(prefix + ".fc_att.weight", init::normal(1, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
        reduce_bias_ = store.add(prefix + ".fc_att.bias", Matrix::Zero(1, 1));
    }

    CoAttentionOutput operator()(const Tensor& f_p, const Tensor& f_g) const {
        const Index d = fc_.in_features();
        if (f_p.rows() < 1 || f_p.cols() != d || f_g.rows() != f_p.rows() || f_g.cols() != d) {
            throw DimensionError("co-attention: expected two 1x" + std::to_string(d) + " inputs, got " + f_p.shape() +
                                 " and " + f_g.shape());
        }
        CoAttentionOutput out;
        const Tensor u_p = fc_(f_p);
        const Tensor u_g = fc_(f_g);
        const Tensor w = transpose(reduce_weight_);
        out.gate_p = add(mul(u_p, matmul(u_g, w)), reduce_bias_);
        out.gate_g = add(mul(u_g, matmul(u_p, w)), reduce_bias_);
        out.fused = add(mul(out.gate_p, f_p), mul(out.gate_g, f_g));
        return out;
    }

    // The d x d co-attention matrix, for inspection.
    Matrix attention(const Tensor& f_p, const Tensor& f_g) const {
        return fc_(f_p).value().transpose() * fc_(f_g).value();
    }

    const Linear& fc() const { return fc_; }
    const Tensor& reduce_weight() const { return reduce_weight_; }
    const Tensor& reduce_bias() const { return reduce_bias_; }

   private:
    Linear fc_;
    Tensor reduce_weight_;  // 1 x d
    Tensor reduce_bias_;    // 1 x 1
};

struct KnowledgeComponents {
    Tensor G;
    Tensor P;
    std::optional<Tensor> C;
    std::optional<Tensor> S;
    std::vector<Tensor> extra;
    Tensor F_g;
    Tensor F_p;

    // Fusion input order after the class token: G, P, S, C, then extras.
    std::vector<Tensor> tokens() const {
        std::vector<Tensor> t{G, P};
        if (S) t.push_back(*S);
        if (C) t.push_back(*C);
        t.insert(t.end(), extra.begin(), extra.end());
        return t;
    }
};

class KnowledgeDecomposer {
   public:
    KnowledgeDecomposer() = default;
    KnowledgeDecomposer(ParameterStore& store, std::mt19937_64& rng, EncoderLayout layout = EncoderLayout::Both,
                        Index dim = kModelDim, const std::string& prefix = "mkd")
        : layout_(layout),
          phi_g_(store, prefix + ".phi_g", rng, dim),
          phi_p_(store, prefix + ".phi_p", rng, dim) {
        if (has_common(layout)) phi_c_.emplace(store, prefix + ".phi_c", rng, dim);
        if (has_synergistic(layout)) phi_s_.emplace(store, prefix + ".phi_s", rng, dim);
        for (int i = 0; i < extra_encoders(layout); ++i) {
            extra_.emplace_back(store, prefix + ".phi_x" + std::to_string(i), rng, dim);
        }
    }

    EncoderLayout layout() const { return layout_; }

    Tensor encode_genomic(const Tensor& f_g) const { return phi_g_(f_g); }
    Tensor encode_pathology(const Tensor& f_p) const { return phi_p_(f_p); }

    KnowledgeComponents operator()(const Tensor& f_g, const Tensor& f_p) const {
        check_input(f_g, "F_g");
        check_input(f_p, "F_p");
        return decompose(f_g, f_p);
    }

    // Components from live F_g, F_p together with the same components computed
    // from gradient-stopped copies, in one stacked pass. The second set feeds
    // l_k, so that loss trains the decomposition without reaching the unimodal
    // encoders.
    std::pair<KnowledgeComponents, KnowledgeComponents> with_frozen_inputs(const Tensor& f_g,
                                                                            const Tensor& f_p) const {
        check_input(f_g, "F_g");
        check_input(f_p, "F_p");
        const KnowledgeComponents both =
            decompose(concat_rows({f_g, f_g.detach()}), concat_rows({f_p, f_p.detach()}));
        auto row = [&](Index r) {
            KnowledgeComponents k;
            k.F_g = r == 0 ? f_g : f_g.detach();
            k.F_p = r == 0 ? f_p : f_p.detach();
            k.G = slice_rows(both.G, r, 1);
            k.P = slice_rows(both.P, r, 1);
            if (both.C) k.C = slice_rows(*both.C, r, 1);
            if (both.S) k.S = slice_rows(*both.S, r, 1);
            for (const auto& e : both.extra) k.extra.push_back(slice_rows(e, r, 1));
            return k;
        };
        return {row(0), row(1)};
    }

    const std::optional<CoAttentionEncoder>& common_encoder() const { return phi_c_; }
    const std::optional<CoAttentionEncoder>& synergistic_encoder() const { return phi_s_; }

   private:
    static void check_input(const Tensor& f, const char* name) {
        if (f.rows() != 1) throw DimensionError(std::string("decomposition: ") + name + " must be one row, got " + f.shape());
    }

    KnowledgeComponents decompose(const Tensor& f_g, const Tensor& f_p) const {
        KnowledgeComponents k;
        k.F_g = f_g;
        k.F_p = f_p;
        k.G = phi_g_(f_g);
        k.P = phi_p_(f_p);
        if (phi_c_) k.C = (*phi_c_)(f_p, f_g).fused;
        if (phi_s_) k.S = (*phi_s_)(f_p, f_g).fused;
        for (const auto& e : extra_) k.extra.push_back(e(f_p, f_g).fused);
        return k;
    }

    EncoderLayout layout_ = EncoderLayout::Both;
    SpecificEncoder phi_g_;
    SpecificEncoder phi_p_;
    std::optional<CoAttentionEncoder> phi_c_;
    std::optional<CoAttentionEncoder> phi_s_;
    std::vector<CoAttentionEncoder> extra_;
};

}  // namespace ccl
