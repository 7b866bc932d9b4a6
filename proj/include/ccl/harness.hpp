#pragma once

// Five-fold cross-validated training runs and ablation grids.

#include <ccl/config.hpp>
#include <ccl/model.hpp>
#include <ccl/pathology_encoder.hpp>
#include <ccl/report.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <initializer_list>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ccl {

using Logger = std::function<void(const std::string&)>;

// splitmix64 over the parts; stable across platforms, unlike seed_seq output
// which is only specified for 32-bit words.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::uint64_t p : parts) {
        h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        std::uint64_t z = (h += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        h = z ^ (z >> 31);
    }
    return h;
}

struct PreparedCohort {
    CohortDataset dataset;
    std::vector<Matrix> centers;      // per-patient k-means centers, k x 1024
    std::vector<double> oracle_risk;  // synthetic cohorts only
};

// Loads or generates the cohort, derives bins, groups and folds, and clusters
// every slide once (clustering does not depend on the model).
inline PreparedCohort prepare_cohort(const RunConfig& cfg) {
    cfg.validate();
    PreparedCohort data;
    if (cfg.uses_manifest()) {
        data.dataset = load_cohort(cfg.manifest);
    } else {
        SyntheticCohort syn = generate_synthetic(cfg.synthetic);
        data.dataset = std::move(syn.dataset);
        data.oracle_risk = std::move(syn.oracle_risk);
    }
    auto& ds = data.dataset;
    if (ds.size() < static_cast<std::size_t>(cfg.folds)) {
        throw ConfigError("cohort has " + std::to_string(ds.size()) + " patients, fewer than " +
                          std::to_string(cfg.folds) + " folds");
    }
    discretize_times(ds, cfg.bins_n);
    assign_groups(ds, cfg.groups_r);
    make_folds(ds, cfg.folds, cfg.seed);
    data.centers.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        data.centers.push_back(kmeans(ds.patients[i].patches, cfg.k, derive_seed({cfg.seed, 1, i})).centers);
    }
    return data;
}

inline ModelConfig model_config(const RunConfig& cfg, const CohortDataset& ds, int fold) {
    ModelConfig mc;
    mc.subseq_lens = ds.subseq_lens;
    mc.k = cfg.k;
    mc.bins = cfg.bins_n;
    mc.use_mkd = !cfg.no_mkd;
    mc.layout = parse_encoder_layout(cfg.encoders);
    mc.modality = parse_modality(cfg.modality);
    mc.seed = derive_seed({cfg.seed, 2, static_cast<std::uint64_t>(fold)});
    return mc;
}

struct FoldResult {
    int fold = 0;
    std::vector<std::size_t> test;  // dataset indices
    std::vector<double> risks;      // parallel to test
    std::vector<double> epoch_loss;  // mean total loss per epoch
    std::vector<double> loss_trace;  // total loss of every step
    double seconds = 0.0;
};

namespace detail {

inline std::string describe_loss(const LossBreakdown& l) {
    std::ostringstream os;
    os.precision(6);
    os << "total=" << l.total.item() << " surv=" << l.surv.item() << " knowledge=" << l.knowledge.item()
       << " patient=" << l.patient.item();
    return os.str();
}

}  // namespace detail

// Trains a fresh model, anchor and bank on every fold but `fold`, then scores
// the held-out patients with the anchor frozen.
inline FoldResult train_fold(const PreparedCohort& data, const RunConfig& cfg, int fold, const Logger& log = {}) {
    const auto start = std::chrono::steady_clock::now();
    const auto& ds = data.dataset;
    FoldResult out;
    out.fold = fold;
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < ds.size(); ++i) (ds.patients[i].fold == fold ? out.test : train).push_back(i);

    CCLModel model(model_config(cfg, ds, fold));
    Anchor anchor(cfg.tau);
    CohortBank bank(cfg.bank_b);
    LossOptions opts;
    opts.alpha = cfg.effective_alpha();
    opts.temperature = cfg.temperature;
    opts.constraints = ConstraintSet::parse(cfg.constraints);
    const bool uses_pathology = model.config().modality != Modality::GenomicsOnly;
    const bool align = uses_pathology && !cfg.no_cca;

    auto centers_for = [&](std::size_t i) -> Matrix {
        if (!align) return data.centers[i];
        return align_centers(data.centers[i], anchor).aligned;
    };

    long iteration = 0;
    out.loss_trace.reserve(train.size() * static_cast<std::size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train;
        std::mt19937_64 rng(derive_seed({cfg.seed, 3, static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0;
        for (std::size_t i : order) {
            const PatientRecord& p = ds.patients[i];
            ++iteration;
            const Matrix aligned = centers_for(i);
            LossBreakdown loss = patient_objective(model, p, aligned, bank, opts);
            const double value = loss.total.item();
            if (!std::isfinite(value)) {
                throw NumericalError("non-finite loss in fold " + std::to_string(fold) + ", epoch " +
                                     std::to_string(epoch) + ", step " + std::to_string(iteration) + ", patient " +
                                     p.id + ": " + detail::describe_loss(loss));
            }
            backward(loss.total);
            sgd_step(model.parameters(), cfg.lr);
            if (align) update_anchor(anchor, aligned);
            if (opts.alpha != 0.0) bank.push(loss.pass.cohort_queries(), p.group, iteration);
            out.loss_trace.push_back(value);
            epoch_total += value;
        }
        out.epoch_loss.push_back(order.empty() ? 0.0 : epoch_total / static_cast<double>(order.size()));
        if (log) {
            std::ostringstream os;
            os.precision(5);
            os << "fold " << fold << " epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << out.epoch_loss.back() << " ("
               << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s)";
            log(os.str());
        }
    }

    anchor.freeze();
    out.risks.reserve(out.test.size());
    for (std::size_t i : out.test) out.risks.push_back(predict_risk(model, ds.patients[i], centers_for(i)));
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

inline std::vector<Prediction> collect_predictions(const PreparedCohort& data, const std::vector<FoldResult>& folds) {
    std::vector<Prediction> preds;
    for (const auto& f : folds) {
        for (std::size_t j = 0; j < f.test.size(); ++j) {
            const auto& p = data.dataset.patients[f.test[j]];
            preds.push_back({p.id, f.fold, p.time, p.censor, f.risks[j], false});
        }
    }
    return preds;
}

// All folds of one configuration. With cfg.jobs > 1 folds train on separate
// threads; each fold owns its model, anchor, bank and RNG streams, so the
// result is the same for any job count.
inline CVReport run_cv(const PreparedCohort& data, const RunConfig& cfg, const Logger& log = {},
                       std::vector<FoldResult>* fold_details = nullptr) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::optional<FoldResult>> results(static_cast<std::size_t>(cfg.folds));
    std::mutex log_mutex;
    Logger safe_log;
    if (log) {
        safe_log = [&](const std::string& msg) {
            std::lock_guard<std::mutex> lock(log_mutex);
            log(msg);
        };
    }
    const int jobs = std::min(cfg.jobs, cfg.folds);
    if (jobs <= 1) {
        for (int f = 0; f < cfg.folds; ++f) results[static_cast<std::size_t>(f)] = train_fold(data, cfg, f, safe_log);
    } else {
        std::atomic<int> next{0};
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.folds));
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) {
            pool.emplace_back([&] {
                for (int f = next++; f < cfg.folds; f = next++) {
                    try {
                        results[static_cast<std::size_t>(f)] = train_fold(data, cfg, f, safe_log);
                    } catch (...) {
                        errors[static_cast<std::size_t>(f)] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    std::vector<FoldResult> folds;
    for (auto& r : results) folds.push_back(std::move(*r));

    CVReport report;
    report.config = cfg;
    report.predictions = collect_predictions(data, folds);
    report.evaluation = evaluate_predictions(report.predictions, cfg.km_split);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (fold_details) *fold_details = std::move(folds);
    return report;
}

inline CVReport run_cv(const RunConfig& cfg, const Logger& log = {}) {
    const auto start = std::chrono::steady_clock::now();
    const PreparedCohort data = prepare_cohort(cfg);
    CVReport report = run_cv(data, cfg, log);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Ablation grids

struct AblationCell {
    std::string grid;
    std::string label;
    RunConfig config;
};

inline const std::vector<std::string>& ablation_grid_names() {
    static const std::vector<std::string> names = {"modules", "encoders", "constraints", "hyper", "variants"};
    return names;
}

// modules: CCA/MKD/CGM toggles; encoders: co-attention encoder counts;
// constraints: similarity-constraint subsets; hyper: k, tau, b, r one at a
// time; variants: the full model against unimodal and no-CGM runs.
inline std::vector<AblationCell> ablation_cells(const RunConfig& base, const std::string& grid) {
    std::vector<AblationCell> cells;
    auto add = [&](const std::string& label, auto&& edit) {
        RunConfig c = base;
        edit(c);
        cells.push_back({grid, label, c});
    };
    if (grid == "modules") {
        add("baseline", [](RunConfig& c) { c.no_cca = c.no_mkd = c.no_cgm = true; });
        add("+CCA", [](RunConfig& c) {
            c.no_cca = false;
            c.no_mkd = c.no_cgm = true;
        });
        add("+CCA+MKD", [](RunConfig& c) {
            c.no_cca = c.no_mkd = false;
            c.no_cgm = true;
        });
        add("full", [](RunConfig& c) { c.no_cca = c.no_mkd = c.no_cgm = false; });
    } else if (grid == "encoders") {
        for (const char* e : {"1_common", "1_synergistic", "2", "3", "5"}) {
            add(e, [e](RunConfig& c) { c.encoders = e; });
        }
    } else if (grid == "constraints") {
        for (const char* s : {"GPS", "GPC", "PCS", "GCS", "GPCS"}) {
            add(s, [s](RunConfig& c) { c.constraints = s; });
        }
    } else if (grid == "hyper") {
        for (int k : {4, 6, 9}) add("k=" + std::to_string(k), [k](RunConfig& c) { c.k = k; });
        for (const char* t : {"0.05", "0.1", "0.3"}) add(std::string("tau=") + t, [t](RunConfig& c) { c.tau = std::stod(t); });
        for (int b : {5, 10, 20}) add("b=" + std::to_string(b), [b](RunConfig& c) { c.bank_b = b; });
        for (int r : {2, 4, 6}) add("r=" + std::to_string(r), [r](RunConfig& c) { c.groups_r = r; });
    } else if (grid == "variants") {
        add("full", [](RunConfig&) {});
        add("no_cgm", [](RunConfig& c) { c.no_cgm = true; });
        add("genomics_only", [](RunConfig& c) { c.modality = "genomics"; });
        add("pathology_only", [](RunConfig& c) { c.modality = "pathology"; });
    } else {
        throw ConfigError("unknown ablation grid '" + grid + "' (expected modules, encoders, constraints, hyper or variants)");
    }
    return cells;
}

struct AblationRow {
    AblationCell cell;
    CVReport report;
};

// Cells that share data-side settings reuse one prepared cohort.
inline std::vector<AblationRow> run_ablation_suite(const RunConfig& base, const std::vector<std::string>& grids,
                                                   const Logger& log = {}) {
    base.validate();
    std::vector<AblationRow> rows;
    std::optional<PreparedCohort> cached;
    RunConfig cached_for;
    auto same_data = [](const RunConfig& a, const RunConfig& b) {
        return a.seed == b.seed && a.folds == b.folds && a.k == b.k && a.groups_r == b.groups_r &&
               a.bins_n == b.bins_n && a.manifest == b.manifest && a.synthetic == b.synthetic;
    };
    for (const auto& grid : grids) {
        for (auto& cell : ablation_cells(base, grid)) {
            if (!cached || !same_data(cached_for, cell.config)) {
                cached = prepare_cohort(cell.config);
                cached_for = cell.config;
            }
            if (log) log("ablation " + cell.grid + " / " + cell.label);
            CVReport report = run_cv(*cached, cell.config, log);
            if (log) {
                std::ostringstream os;
                os.precision(4);
                os << "ablation " << cell.grid << " / " << cell.label << ": mean C-index " << report.evaluation.mean_cindex
                   << " (" << report.wall_seconds << " s)";
                log(os.str());
            }
            rows.push_back({std::move(cell), std::move(report)});
        }
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    int max_folds = 0;
    for (const auto& r : rows) max_folds = std::max(max_folds, static_cast<int>(r.report.evaluation.folds.size()));
    std::string s = "grid,label,mean_cindex,std_cindex";
    for (int f = 0; f < max_folds; ++f) s += ",cindex_fold" + std::to_string(f);
    s += ",logrank_chi2,logrank_p,ttest_t,ttest_p,wall_seconds\n";
    auto num = [](double v) { return std::isfinite(v) ? detail::format_double(v) : std::string(); };
    for (const auto& r : rows) {
        const auto& ev = r.report.evaluation;
        s += r.cell.grid + "," + r.cell.label + "," + num(ev.mean_cindex) + "," + num(ev.std_cindex);
        for (int f = 0; f < max_folds; ++f) {
            s += ",";
            if (f < static_cast<int>(ev.folds.size())) s += num(ev.folds[static_cast<std::size_t>(f)].cindex);
        }
        s += "," + (ev.logrank ? num(ev.logrank->statistic) : std::string()) + "," +
             (ev.logrank ? num(ev.logrank->p_value) : std::string()) + "," +
             (ev.ttest ? num(ev.ttest->statistic) : std::string()) + "," +
             (ev.ttest ? num(ev.ttest->p_value) : std::string()) + "," + num(r.report.wall_seconds) + "\n";
    }
    return s;
}

}  // namespace ccl
