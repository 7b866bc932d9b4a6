#pragma once

// Run configuration and its JSON form.

#include <ccl/cgm.hpp>
#include <ccl/cohort.hpp>
#include <ccl/errors.hpp>
#include <ccl/mkd.hpp>
#include <ccl/model.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <set>
#include <string>

namespace ccl {

struct RunConfig {
    std::uint64_t seed = 0;
    int folds = 5;
    int epochs = 30;
    double lr = 1e-3;
    double alpha = 1.0;
    double temperature = 1.0;
    int k = 6;
    double tau = 0.1;
    int bank_b = 10;
    int groups_r = 4;
    int bins_n = 4;
    bool no_cca = false;
    bool no_mkd = false;
    bool no_cgm = false;  // forces alpha to 0
    std::string constraints = "GPCS";
    std::string encoders = "2";
    std::string modality = "both";  // both, genomics, pathology
    std::string km_split = "risk";  // risk: median predicted risk; time: median observed time
    std::string manifest;           // empty: use the synthetic spec
    SyntheticSpec synthetic;
    int jobs = 1;  // folds trained concurrently; results do not depend on it

    double effective_alpha() const { return no_cgm ? 0.0 : alpha; }
    bool uses_manifest() const { return !manifest.empty(); }

    void validate() const {
        if (folds < 2) throw ConfigError("folds must be >= 2");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
        if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
        if (k < 1) throw ConfigError("k must be >= 1");
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
        if (bank_b < 1) throw ConfigError("bank_b must be >= 1");
        if (groups_r < 1) throw ConfigError("groups_r must be >= 1");
        if (bins_n < 1) throw ConfigError("bins_n must be >= 1");
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
        ConstraintSet::parse(constraints);
        parse_encoder_layout(encoders);
        parse_modality(modality);
        if (km_split != "risk" && km_split != "time") {
            throw ConfigError("km_split must be 'risk' or 'time', got '" + km_split + "'");
        }
        if (!uses_manifest()) synthetic.validate();
    }

    bool operator==(const RunConfig&) const = default;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (known.count(it.key()) == 0) throw ConfigError(std::string("unknown ") + what + " field '" + it.key() + "'");
    }
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = nlohmann::json{{"num_patients", s.num_patients},
                       {"dim_red", s.dim_red},
                       {"dim_g", s.dim_g},
                       {"dim_p", s.dim_p},
                       {"w_red", s.w_red},
                       {"w_g", s.w_g},
                       {"w_p", s.w_p},
                       {"w_syn", s.w_syn},
                       {"censor_rate", s.censor_rate},
                       {"patches_min", s.patches_min},
                       {"patches_max", s.patches_max},
                       {"phenotypes", s.phenotypes},
                       {"noise_std", s.noise_std},
                       {"time_scale_days", s.time_scale_days},
                       {"subseq_lens", s.subseq_lens},
                       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    detail::reject_unknown(j,
                           {"num_patients", "dim_red", "dim_g", "dim_p", "w_red", "w_g", "w_p", "w_syn", "censor_rate",
                            "patches_min", "patches_max", "phenotypes", "noise_std", "time_scale_days", "subseq_lens",
                            "seed"},
                           "synthetic spec");
    s = SyntheticSpec{};
    detail::read_field(j, "num_patients", s.num_patients);
    detail::read_field(j, "dim_red", s.dim_red);
    detail::read_field(j, "dim_g", s.dim_g);
    detail::read_field(j, "dim_p", s.dim_p);
    detail::read_field(j, "w_red", s.w_red);
    detail::read_field(j, "w_g", s.w_g);
    detail::read_field(j, "w_p", s.w_p);
    detail::read_field(j, "w_syn", s.w_syn);
    detail::read_field(j, "censor_rate", s.censor_rate);
    detail::read_field(j, "patches_min", s.patches_min);
    detail::read_field(j, "patches_max", s.patches_max);
    detail::read_field(j, "phenotypes", s.phenotypes);
    detail::read_field(j, "noise_std", s.noise_std);
    detail::read_field(j, "time_scale_days", s.time_scale_days);
    detail::read_field(j, "subseq_lens", s.subseq_lens);
    detail::read_field(j, "seed", s.seed);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"seed", c.seed},
                       {"folds", c.folds},
                       {"epochs", c.epochs},
                       {"lr", c.lr},
                       {"alpha", c.alpha},
                       {"temperature", c.temperature},
                       {"k", c.k},
                       {"tau", c.tau},
                       {"bank_b", c.bank_b},
                       {"groups_r", c.groups_r},
                       {"bins_n", c.bins_n},
                       {"no_cca", c.no_cca},
                       {"no_mkd", c.no_mkd},
                       {"no_cgm", c.no_cgm},
                       {"constraints", c.constraints},
                       {"encoders", c.encoders},
                       {"modality", c.modality},
                       {"km_split", c.km_split},
                       {"jobs", c.jobs}};
    if (c.uses_manifest()) {
        j["manifest"] = c.manifest;
        j["synthetic"] = nullptr;
    } else {
        j["manifest"] = nullptr;
        j["synthetic"] = c.synthetic;
    }
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    detail::reject_unknown(j,
                           {"seed", "folds", "epochs", "lr", "alpha", "temperature", "k", "tau", "bank_b", "groups_r",
                            "bins_n", "no_cca", "no_mkd", "no_cgm", "constraints", "encoders", "modality", "km_split",
                            "manifest", "synthetic", "jobs"},
                           "config");
    c = RunConfig{};
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "folds", c.folds);
    detail::read_field(j, "epochs", c.epochs);
    detail::read_field(j, "lr", c.lr);
    detail::read_field(j, "alpha", c.alpha);
    detail::read_field(j, "temperature", c.temperature);
    detail::read_field(j, "k", c.k);
    detail::read_field(j, "tau", c.tau);
    detail::read_field(j, "bank_b", c.bank_b);
    detail::read_field(j, "groups_r", c.groups_r);
    detail::read_field(j, "bins_n", c.bins_n);
    detail::read_field(j, "no_cca", c.no_cca);
    detail::read_field(j, "no_mkd", c.no_mkd);
    detail::read_field(j, "no_cgm", c.no_cgm);
    detail::read_field(j, "constraints", c.constraints);
    detail::read_field(j, "encoders", c.encoders);
    detail::read_field(j, "modality", c.modality);
    detail::read_field(j, "km_split", c.km_split);
    detail::read_field(j, "manifest", c.manifest);
    detail::read_field(j, "synthetic", c.synthetic);
    detail::read_field(j, "jobs", c.jobs);
}

}  // namespace ccl
