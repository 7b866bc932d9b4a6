// Command-line front end: train, evaluate, ablate, synth-gen, report.

#include <ccl/harness.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

// Every RunConfig flag is optional so that it only overrides a --config file
// when given.
struct ConfigFlags {
    std::optional<std::string> config_file;
    std::optional<std::uint64_t> seed;
    std::optional<int> folds, epochs, k, bank, groups, bins, jobs;
    std::optional<double> lr, alpha, temperature, tau;
    bool no_cca = false, no_mkd = false, no_cgm = false;
    std::optional<std::string> constraints, encoders, modality, km_split, manifest, synthetic;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "JSON RunConfig to start from")->check(CLI::ExistingFile);
        app->add_option("--seed", seed, "Global seed (default 0)");
        app->add_option("--folds", folds, "Cross-validation folds (default 5)");
        app->add_option("--epochs", epochs, "Training epochs per fold (default 30)");
        app->add_option("--lr", lr, "SGD learning rate (default 1e-3)");
        app->add_option("--alpha", alpha, "Weight of the cohort loss (default 1)");
        app->add_option("--temperature", temperature, "Patient-level loss temperature (default 1)");
        app->add_option("--k", k, "K-means clusters per slide (default 6)");
        app->add_option("--tau", tau, "Anchor update ratio (default 0.1)");
        app->add_option("--bank", bank, "Cohort bank length in iterations (default 10)");
        app->add_option("--groups", groups, "Patient groups by survival time (default 4)");
        app->add_option("--bins", bins, "Discrete time bins (default 4)");
        app->add_flag("--no-cca", no_cca, "Disable cluster-center alignment");
        app->add_flag("--no-mkd", no_mkd, "Feed unimodal features straight to fusion");
        app->add_flag("--no-cgm", no_cgm, "Drop the cohort loss (alpha = 0)");
        app->add_option("--constraints", constraints, "Similarity constraints, subset of GPCS");
        app->add_option("--encoders", encoders, "Co-attention encoders: 1_common, 1_synergistic, 2, 3 or 5");
        app->add_option("--modality", modality, "both, genomics or pathology");
        app->add_option("--km-split", km_split, "Median split on predicted risk (risk) or observed time (time)");
        app->add_option("--jobs", jobs, "Folds trained concurrently (default 1)");
        auto* m = app->add_option("--manifest", manifest, "Cohort manifest (cohort.csv)")->check(CLI::ExistingFile);
        auto* s = app->add_option("--synthetic", synthetic, "Synthetic cohort spec (JSON)")->check(CLI::ExistingFile);
        m->excludes(s);
    }

    ccl::RunConfig build() const {
        ccl::RunConfig c;
        if (config_file) c = read_json(*config_file).get<ccl::RunConfig>();
        if (seed) c.seed = *seed;
        if (folds) c.folds = *folds;
        if (epochs) c.epochs = *epochs;
        if (lr) c.lr = *lr;
        if (alpha) c.alpha = *alpha;
        if (temperature) c.temperature = *temperature;
        if (k) c.k = *k;
        if (tau) c.tau = *tau;
        if (bank) c.bank_b = *bank;
        if (groups) c.groups_r = *groups;
        if (bins) c.bins_n = *bins;
        if (jobs) c.jobs = *jobs;
        if (no_cca) c.no_cca = true;
        if (no_mkd) c.no_mkd = true;
        if (no_cgm) c.no_cgm = true;
        if (constraints) c.constraints = *constraints;
        if (encoders) c.encoders = *encoders;
        if (modality) c.modality = *modality;
        if (km_split) c.km_split = *km_split;
        if (manifest) {
            c.manifest = fs::absolute(*manifest).lexically_normal().string();
        }
        if (synthetic) {
            c.manifest.clear();
            c.synthetic = read_json(*synthetic).get<ccl::SyntheticSpec>();
        }
        c.validate();
        return c;
    }

    static nlohmann::json read_json(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ccl::IoError("cannot read " + path);
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ccl::ConfigError(path + ": " + e.what());
        }
    }
};

void print_summary(const ccl::CVReport& r) {
    const auto& ev = r.evaluation;
    std::cout << "folds:";
    for (const auto& f : ev.folds) std::cout << " " << f.cindex;
    std::cout << "\nmean C-index " << ev.mean_cindex << " (std " << ev.std_cindex << ")\n";
    if (ev.logrank) std::cout << "log-rank chi2 " << ev.logrank->statistic << " p " << ev.logrank->p_value << "\n";
    if (ev.ttest) std::cout << "Welch t " << ev.ttest->statistic << " p " << ev.ttest->p_value << "\n";
}

std::string safe_name(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '_';
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cohort-individual cooperative learning for multimodal survival analysis"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

    ConfigFlags train_flags;
    std::string train_out;
    auto* train = app.add_subcommand("train", "Cross-validated training run; writes report files");
    train_flags.attach(train);
    train->add_option("--out", train_out, "Output directory")->required();

    std::string eval_preds, eval_split = "risk", eval_out;
    auto* evaluate = app.add_subcommand("evaluate", "Statistics for a predictions CSV");
    evaluate->add_option("--predictions", eval_preds, "patient_id,fold,time_days,censor,risk CSV")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--km-split", eval_split, "risk or time");
    evaluate->add_option("--out", eval_out, "Also write cindex.csv, km.csv and km.svg here");

    ConfigFlags ablate_flags;
    std::string ablate_out;
    std::vector<std::string> grids;
    auto* ablate = app.add_subcommand("ablate", "Run ablation grids; writes ablation.csv and per-cell reports");
    ablate_flags.attach(ablate);
    ablate->add_option("--grid", grids, "modules, encoders, constraints, hyper, variants or all")->delimiter(',');
    ablate->add_option("--out", ablate_out, "Output directory")->required();

    std::optional<std::string> gen_spec;
    std::optional<std::uint64_t> gen_seed;
    std::optional<std::size_t> gen_patients;
    std::string gen_out;
    auto* synth = app.add_subcommand("synth-gen", "Write a synthetic cohort in manifest form");
    synth->add_option("--synthetic", gen_spec, "Synthetic cohort spec (JSON)")->check(CLI::ExistingFile);
    synth->add_option("--seed", gen_seed, "Override the spec seed");
    synth->add_option("--patients", gen_patients, "Override the number of patients");
    synth->add_option("--out", gen_out, "Output directory")->required();

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Regenerate report files from a run directory");
    report->add_option("--out,dir", report_dir, "Run directory with report.json and predictions.csv")->required();

    CLI11_PARSE(app, argc, argv);

    ccl::Logger log;
    if (!quiet) log = [](const std::string& m) { std::cerr << m << "\n"; };

    try {
        if (*train) {
            const ccl::RunConfig cfg = train_flags.build();
            const ccl::CVReport r = ccl::run_cv(cfg, log);
            ccl::emit_report(r, train_out);
            print_summary(r);
        } else if (*evaluate) {
            auto preds = ccl::load_predictions(eval_preds);
            const ccl::Evaluation ev = ccl::evaluate_predictions(preds, eval_split);
            ccl::CVReport r;
            r.predictions = preds;
            r.evaluation = ev;
            nlohmann::json j = ccl::report_json(r);
            j.erase("config");
            j.erase("wall_seconds");
            std::cout << j.dump(2) << "\n";
            if (!eval_out.empty()) {
                fs::create_directories(eval_out);
                ccl::detail::write_text(fs::path(eval_out) / "cindex.csv", ccl::cindex_csv(ev));
                ccl::detail::write_text(fs::path(eval_out) / "km.csv", ccl::km_csv(ev));
                ccl::detail::write_text(fs::path(eval_out) / "km.svg", ccl::km_svg(ev));
            }
        } else if (*ablate) {
            const ccl::RunConfig base = ablate_flags.build();
            std::vector<std::string> names;
            if (grids.empty() || std::find(grids.begin(), grids.end(), "all") != grids.end()) {
                names = {"modules", "encoders", "constraints", "hyper"};
            } else {
                names = grids;
            }
            const auto rows = ccl::run_ablation_suite(base, names, log);
            fs::create_directories(ablate_out);
            ccl::detail::write_text(fs::path(ablate_out) / "ablation.csv", ccl::ablation_csv(rows));
            for (const auto& row : rows) {
                ccl::emit_report(row.report, fs::path(ablate_out) / row.cell.grid / safe_name(row.cell.label));
            }
            std::cout << ccl::ablation_csv(rows);
        } else if (*synth) {
            ccl::SyntheticSpec spec;
            if (gen_spec) spec = ConfigFlags::read_json(*gen_spec).get<ccl::SyntheticSpec>();
            if (gen_seed) spec.seed = *gen_seed;
            if (gen_patients) spec.num_patients = *gen_patients;
            const ccl::SyntheticCohort syn = ccl::generate_synthetic(spec);
            ccl::write_cohort(syn.dataset, gen_out);
            std::string oracle = "patient_id,log_hazard\n";
            for (std::size_t i = 0; i < syn.dataset.size(); ++i) {
                oracle += syn.dataset.patients[i].id + "," + ccl::detail::format_double(syn.oracle_risk[i]) + "\n";
            }
            ccl::detail::write_text(fs::path(gen_out) / "oracle_risk.csv", oracle);
            nlohmann::json j = spec;
            ccl::detail::write_text(fs::path(gen_out) / "spec.json", j.dump(2) + "\n");
            std::cout << "wrote " << syn.dataset.size() << " patients to " << gen_out << "\n";
        } else if (*report) {
            const ccl::CVReport r = ccl::load_report(report_dir);
            ccl::emit_report(r, report_dir);
            print_summary(r);
        }
    } catch (const ccl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ccl::CohortError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ccl::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const ccl::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
