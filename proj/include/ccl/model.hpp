#pragma once

// Full network: unimodal encoders, knowledge decomposition, transformer
// fusion, and the per-patient training objective L_surv + alpha * L_cohort.

#include <ccl/cgm.hpp>
#include <ccl/cohort.hpp>
#include <ccl/fusion.hpp>
#include <ccl/genomics_encoder.hpp>
#include <ccl/mkd.hpp>
#include <ccl/parameters.hpp>
#include <ccl/pathology_encoder.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ccl {

enum class Modality { Both, GenomicsOnly, PathologyOnly };

inline std::string to_string(Modality m) {
    switch (m) {
        case Modality::Both:
            return "both";
        case Modality::GenomicsOnly:
            return "genomics";
        case Modality::PathologyOnly:
            return "pathology";
    }
    return "both";
}

inline Modality parse_modality(const std::string& s) {
    if (s == "both") return Modality::Both;
    if (s == "genomics") return Modality::GenomicsOnly;
    if (s == "pathology") return Modality::PathologyOnly;
    throw ConfigError("unknown modality '" + s + "' (expected both, genomics or pathology)");
}

struct ModelConfig {
    std::vector<std::size_t> subseq_lens = {16, 16, 16, 16, 16, 16};
    int k = 6;
    int bins = 4;
    bool use_mkd = true;  // single-modality models never decompose
    EncoderLayout layout = EncoderLayout::Both;
    Modality modality = Modality::Both;
    Index dim = kModelDim;
    TransformerConfig transformer;
    std::uint64_t seed = 0;

    bool decomposes() const { return use_mkd && modality == Modality::Both; }
};

struct ForwardPass {
    Tensor F_g;  // undefined when genomics is unused
    Tensor F_p;  // undefined when pathology is unused
    std::optional<KnowledgeComponents> components;
    std::optional<KnowledgeComponents> frozen_components;  // from gradient-stopped F_g, F_p; feeds l_k
    std::vector<Tensor> tokens;  // fed to the fusion transformer after U
    HazardPrediction prediction;

    // Vectors that enter the cohort bank and the patient-level loss.
    std::vector<std::pair<ComponentType, Tensor>> cohort_queries() const {
        if (components) return bank_components(*components);
        std::vector<std::pair<ComponentType, Tensor>> q;
        if (F_g.defined()) q.emplace_back(ComponentType::Genomic, F_g);
        if (F_p.defined()) q.emplace_back(ComponentType::Pathology, F_p);
        return q;
    }
};

class CCLModel {
   public:
    explicit CCLModel(const ModelConfig& cfg) : cfg_(cfg) {
        std::mt19937_64 rng(cfg.seed);
        TransformerConfig tcfg = cfg.transformer;
        tcfg.dim = cfg.dim;
        if (cfg.modality != Modality::PathologyOnly) {
            genomics_.emplace(store_, cfg.subseq_lens, rng, cfg.dim);
        }
        if (cfg.modality != Modality::GenomicsOnly) {
            pathology_.emplace(store_, cfg.k, rng, cfg.dim);
        }
        if (cfg.decomposes()) decomposer_.emplace(store_, rng, cfg.layout, cfg.dim);
        fusion_ = FusionHead(store_, cfg.bins, rng, tcfg);
    }

    CCLModel(const CCLModel&) = delete;
    CCLModel& operator=(const CCLModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& parameters() { return store_; }
    const ParameterStore& parameters() const { return store_; }

    const std::optional<GenomicsEncoder>& genomics_encoder() const { return genomics_; }
    const std::optional<PathologyEncoder>& pathology_encoder() const { return pathology_; }
    const std::optional<KnowledgeDecomposer>& decomposer() const { return decomposer_; }
    const FusionHead& fusion() const { return fusion_; }

    ForwardPass forward(const std::vector<std::vector<double>>& genomics, const Matrix& aligned_centers,
                        bool with_frozen = false) const {
        ForwardPass pass;
        if (genomics_) pass.F_g = (*genomics_)(genomics);
        if (pathology_) pass.F_p = (*pathology_)(aligned_centers);
        if (decomposer_ && with_frozen) {
            auto [live, frozen] = decomposer_->with_frozen_inputs(pass.F_g, pass.F_p);
            pass.components = std::move(live);
            pass.frozen_components = std::move(frozen);
            pass.tokens = pass.components->tokens();
        } else if (decomposer_) {
            pass.components = (*decomposer_)(pass.F_g, pass.F_p);
            pass.tokens = pass.components->tokens();
        } else {
            if (pass.F_g.defined()) pass.tokens.push_back(pass.F_g);
            if (pass.F_p.defined()) pass.tokens.push_back(pass.F_p);
        }
        pass.prediction = fusion_(pass.tokens);
        return pass;
    }

   private:
    ModelConfig cfg_;
    ParameterStore store_;
    std::optional<GenomicsEncoder> genomics_;
    std::optional<PathologyEncoder> pathology_;
    std::optional<KnowledgeDecomposer> decomposer_;
    FusionHead fusion_;
};

struct LossOptions {
    double alpha = 1.0;
    double temperature = 1.0;
    ConstraintSet constraints;
};

struct LossBreakdown {
    Tensor total;
    Tensor surv;
    Tensor cohort;     // zero scalar when alpha == 0
    Tensor knowledge;  // l_k
    Tensor patient;    // l_p
    ForwardPass pass;
};

// One patient's objective. Pure with respect to the bank: pushing the new
// components is left to the caller.
inline LossBreakdown patient_objective(const CCLModel& model, const PatientRecord& patient, const Matrix& aligned,
                                       const CohortBank& bank, const LossOptions& opts) {
    LossBreakdown out;
    out.pass = model.forward(patient.genomics, aligned, opts.alpha != 0.0);
    out.surv = nll_loss(out.pass.prediction.hazards, patient.censor, patient.time_bin);
    if (opts.alpha == 0.0) {
        out.knowledge = Tensor::scalar(0.0);
        out.patient = Tensor::scalar(0.0);
        out.cohort = Tensor::scalar(0.0);
        out.total = out.surv;
        return out;
    }
    out.knowledge = out.pass.frozen_components ? knowledge_loss(*out.pass.frozen_components, opts.constraints)
                                               : Tensor::scalar(0.0);
    out.patient = patient_level_loss(out.pass.cohort_queries(), bank, patient.group, patient.censor, opts.temperature);
    out.cohort = add(out.knowledge, out.patient);
    out.total = total_loss(out.surv, out.cohort, opts.alpha);
    return out;
}

inline double predict_risk(const CCLModel& model, const PatientRecord& patient, const Matrix& aligned) {
    return risk_score(model.forward(patient.genomics, aligned).prediction.values());
}

}  // namespace ccl
