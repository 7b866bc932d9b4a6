#pragma once

#include "oracles.hpp"

#include <memory>

namespace fixture {

inline ccl::RunConfig small_config(std::size_t patients = 12, std::uint64_t seed = 7) {
    ccl::RunConfig cfg;
    cfg.seed = seed;
    cfg.folds = 2;
    cfg.synthetic.num_patients = patients;
    cfg.synthetic.seed = seed;
    cfg.synthetic.patches_min = 8;
    cfg.synthetic.patches_max = 12;
    return cfg;
}

// A four-patient batch objective with a populated bank, so every loss term
// (survival, l_k, l_p) is live.
struct BatchProblem {
    ccl::PreparedCohort data;
    std::unique_ptr<ccl::CCLModel> model;
    ccl::CohortBank bank{10};
    std::vector<ccl::Matrix> aligned;
    std::vector<std::size_t> batch{0, 1, 2, 3};
    ccl::LossOptions opts;

    BatchProblem(const ccl::ModelConfig& mc, const ccl::RunConfig& cfg) : data(ccl::prepare_cohort(cfg)) {
        model = std::make_unique<ccl::CCLModel>(mc);
        ccl::Anchor anchor(cfg.tau);
        for (const auto& c : data.centers) {
            aligned.push_back(ccl::align_centers(c, anchor).aligned);
            ccl::update_anchor(anchor, aligned.back());
        }
        // Banked components from the patients outside the batch.
        long it = 0;
        for (std::size_t i = batch.size(); i < data.dataset.size(); ++i) {
            const auto& p = data.dataset.patients[i];
            const auto pass = model->forward(p.genomics, aligned[i]);
            bank.push(pass.cohort_queries(), p.group, it++);
        }
    }

    ccl::Tensor loss_tensor() const {
        ccl::Tensor total;
        for (std::size_t i : batch) {
            const auto l = ccl::patient_objective(*model, data.dataset.patients[i], aligned[i], bank, opts);
            total = total.defined() ? ccl::add(total, l.total) : l.total;
        }
        return total;
    }

    double loss() const { return loss_tensor().item(); }

    // Oracle for the training objective's gradient. l_k is rebuilt through the
    // plain decomposition with F_g, F_p held at the values recorded by
    // pin_features(), so perturbing an encoder parameter moves the survival
    // and patient-level terms but not l_k.
    void pin_features() {
        pinned.clear();
        for (std::size_t i : batch) {
            const auto pass = model->forward(data.dataset.patients[i].genomics, aligned[i]);
            pinned.emplace_back(pass.F_g.value(), pass.F_p.value());
        }
    }

    double pinned_loss() const {
        double total = 0.0;
        for (std::size_t j = 0; j < batch.size(); ++j) {
            const auto& patient = data.dataset.patients[batch[j]];
            const auto pass = model->forward(patient.genomics, aligned[batch[j]]);
            const ccl::Tensor surv = ccl::nll_loss(pass.prediction.hazards, patient.censor, patient.time_bin);
            const auto frozen = (*model->decomposer())(ccl::Tensor(pinned[j].first), ccl::Tensor(pinned[j].second));
            const ccl::Tensor lk = ccl::knowledge_loss(frozen, opts.constraints);
            const ccl::Tensor lp =
                ccl::patient_level_loss(pass.cohort_queries(), bank, patient.group, patient.censor, opts.temperature);
            total += ccl::total_loss(surv, ccl::add(lk, lp), opts.alpha).item();
        }
        return total;
    }

    std::vector<std::pair<ccl::Matrix, ccl::Matrix>> pinned;
};

inline ccl::ModelConfig reduced_model(std::uint64_t seed = 3) {
    ccl::ModelConfig mc;
    mc.dim = 8;
    mc.transformer.heads = 2;
    mc.transformer.ff_dim = 12;
    mc.k = 6;
    mc.seed = seed;
    return mc;
}

inline ccl::ModelConfig full_model(std::uint64_t seed = 3) {
    ccl::ModelConfig mc;
    mc.seed = seed;
    return mc;
}

}  // namespace fixture
