// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `--only name[,name]` runs a subset.

#include "fixtures.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace ccl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------

struct GradientStats {
    double worst = 0.0;
    std::string where;
    std::size_t checks = 0;

    void record(double err, const std::string& name) {
        ++checks;
        if (err > worst) {
            worst = err;
            where = name;
        }
    }
};

// Every scalar of every parameter of a narrow model.
void check_every_scalar(fixture::BatchProblem& prob, GradientStats& stats) {
    auto& store = prob.model->parameters();
    store.zero_grad();
    backward(prob.loss_tensor());
    prob.pin_features();
    auto f = [&]() { return prob.pinned_loss(); };
    for (auto& p : store.all()) {
        const Matrix g = p.tensor.grad();
        for (Index i = 0; i < p.tensor.size(); ++i) {
            stats.record(oracle::relative_error(g.data()[i], oracle::numeric_grad(p.tensor, i, f), oracle::kModelGradientFloor), p.name);
        }
    }
}

// Full-size model: every parameter tensor gets a directional derivative along
// a random direction plus a few individually checked scalars.
void check_full_model(fixture::BatchProblem& prob, GradientStats& stats, int scalars_per_tensor) {
    auto& store = prob.model->parameters();
    store.zero_grad();
    backward(prob.loss_tensor());
    prob.pin_features();
    std::mt19937_64 rng(99);
    auto f = [&]() { return prob.pinned_loss(); };
    for (auto& p : store.all()) {
        const Matrix g = p.tensor.grad();
        const Matrix base = p.tensor.value();
        // Unit direction: a step then moves pre-activations about as far as a
        // single-scalar step does, instead of sqrt(size) times further across
        // SELU and |cos| kinks.
        Matrix dir = oracle::random_matrix(base.rows(), base.cols(), rng);
        dir /= dir.norm();
        const double h = 1e-4 * std::max(1.0, base.cwiseAbs().maxCoeff());
        auto at = [&](double t) {
            p.tensor.mutable_value() = base + t * dir;
            return f();
        };
        const double numeric = oracle::kink_safe_derivative(at, h);
        p.tensor.mutable_value() = base;
        stats.record(oracle::relative_error(g.cwiseProduct(dir).sum(), numeric, oracle::kModelGradientFloor), p.name + " (direction)");

        std::uniform_int_distribution<Index> pick(0, p.tensor.size() - 1);
        for (int s = 0; s < scalars_per_tensor; ++s) {
            const Index i = pick(rng);
            stats.record(oracle::relative_error(g.data()[i], oracle::numeric_grad(p.tensor, i, f), oracle::kModelGradientFloor), p.name);
        }
    }
}

Outcome gradient_suite() {
    const auto start = Clock::now();
    GradientStats narrow, full;
    {
        fixture::BatchProblem prob(fixture::reduced_model(), fixture::small_config());
        check_every_scalar(prob, narrow);
    }
    std::size_t full_params = 0;
    {
        fixture::BatchProblem prob(fixture::full_model(), fixture::small_config());
        full_params = prob.model->parameters().scalar_count();
        check_full_model(prob, full, 2);
    }
    const double elapsed = seconds_since(start);
    const double worst = std::max(narrow.worst, full.worst);
    Outcome o;
    o.pass = worst < 1e-5 && elapsed < 60.0;
    o.detail = "narrow model " + std::to_string(narrow.checks) + " scalars, max rel err " + fmt(narrow.worst) +
               (narrow.where.empty() ? "" : " (" + narrow.where + ")") + "; full model (" + std::to_string(full_params) +
               " params) " + std::to_string(full.checks) + " checks, max rel err " + fmt(full.worst) +
               (full.where.empty() ? "" : " (" + full.where + ")") + "; " + fmt(elapsed, 3) + " s";
    return o;
}

Outcome stop_gradient() {
    fixture::BatchProblem prob(fixture::full_model(), fixture::small_config());
    auto& store = prob.model->parameters();
    std::size_t upstream = 0, nonzero_upstream = 0, decomposition_live = 0;
    for (std::size_t b : prob.batch) {
        store.zero_grad();
        const auto& patient = prob.data.dataset.patients[b];
        const auto loss = patient_objective(*prob.model, patient, prob.aligned[b], prob.bank, prob.opts);
        backward(loss.knowledge);
        for (const auto& p : store.all()) {
            const bool is_upstream = p.name.rfind("genomics.", 0) == 0 || p.name.rfind("pathology.", 0) == 0;
            const Matrix& g = p.tensor.grad();
            if (is_upstream) {
                upstream += static_cast<std::size_t>(g.size());
                for (Index i = 0; i < g.size(); ++i) nonzero_upstream += g.data()[i] != 0.0;
            } else if (p.name.rfind("mkd.", 0) == 0 && g.cwiseAbs().maxCoeff() > 0.0) {
                ++decomposition_live;
            }
        }
    }
    Outcome o;
    o.pass = upstream > 0 && nonzero_upstream == 0 && decomposition_live > 0;
    o.detail = std::to_string(nonzero_upstream) + " nonzero of " + std::to_string(upstream) +
               " upstream gradient entries over 4 patients; " + std::to_string(decomposition_live) +
               " decomposition tensors receive gradient";
    return o;
}

Outcome assignment_oracle() {
    const auto start = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> size(2, 7);
    int mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int k = size(rng);
        const Matrix centers = oracle::random_matrix(k, 16, rng);
        Anchor anchor;
        anchor.centers = oracle::random_matrix(k, 16, rng);
        anchor.initialized = true;
        const auto a = align_centers(centers, anchor);
        const Matrix sim = similarity_matrix(anchor.centers, centers);
        double got = 0.0;
        for (int i = 0; i < k; ++i) got += sim(i, a.permutation[static_cast<std::size_t>(i)]);
        const double want = oracle::best_assignment(sim);
        bool aligned_ok = true;
        for (int i = 0; i < k; ++i) aligned_ok &= a.aligned.row(i) == centers.row(a.permutation[static_cast<std::size_t>(i)]);
        if (got != want || !aligned_ok) ++mismatches;
    }
    const double elapsed = seconds_since(start);
    return {mismatches == 0 && elapsed < 10.0,
            std::to_string(mismatches) + " of 200 differ from factorial enumeration (k in 2..7); " + fmt(elapsed, 3) + " s"};
}

std::vector<SurvivalOutcome> random_outcomes(std::mt19937_64& rng, std::size_t n, double censor_rate) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<SurvivalOutcome> o(n);
    for (auto& x : o) {
        x.time = 1.0 + std::floor(400.0 * u(rng));  // integer days, so ties occur
        x.censor = u(rng) < censor_rate ? 1 : 0;
        x.risk = std::floor(50.0 * u(rng)) / 50.0;
    }
    return o;
}

Outcome cindex_oracle() {
    std::mt19937_64 rng(7);
    int mismatches = 0, not_invariant = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto o = random_outcomes(rng, 200, 0.3);
        const double c = concordance_index(o);
        if (c != oracle::cindex(o)) ++mismatches;
        for (auto& x : o) x.risk = std::exp(2.0 * x.risk) * 3.0 - 1.0;
        if (concordance_index(o) != c) ++not_invariant;
    }
    return {mismatches == 0 && not_invariant == 0,
            std::to_string(mismatches) + " of 50 cohorts differ from pair enumeration; " + std::to_string(not_invariant) +
                " change under a monotone transform"};
}

Outcome statistics_fixtures() {
    std::vector<std::string> failed;
    const std::vector<SurvivalOutcome> km_in{{1, 0, 0}, {2, 1, 0}, {3, 0, 0}};
    const auto km = km_curve(km_in);
    if (km.at(1.0) != 2.0 / 3.0) failed.push_back("KM S(1)=" + fmt(km.at(1.0), 17));
    if (km.at(3.0) != 0.0) failed.push_back("KM S(3)=" + fmt(km.at(3.0), 17));

    const Tensor half(Matrix::Constant(1, 4, 0.5));
    for (int c : {1, 0}) {
        const double v = nll_loss(half, c, 2).item();
        if (std::abs(v - std::log(4.0)) > 1e-9 || std::abs(v - 1.386294) > 1e-6) {
            failed.push_back("NLL(c=" + std::to_string(c) + ")=" + fmt(v, 12));
        }
    }

    std::mt19937_64 rng(3);
    const auto group = random_outcomes(rng, 40, 0.2);
    const auto lr = logrank_test(group, group);
    if (std::abs(lr.statistic) > 1e-8 || std::abs(lr.p_value - 1.0) > 1e-8) {
        failed.push_back("log-rank chi2=" + fmt(lr.statistic) + " p=" + fmt(lr.p_value, 12));
    }
    const std::vector<double> sample{1, 2, 3};
    const auto w = welch_ttest(sample, sample);
    if (std::abs(w.statistic) > 1e-8 || std::abs(w.p_value - 1.0) > 1e-8) {
        failed.push_back("Welch t=" + fmt(w.statistic) + " p=" + fmt(w.p_value, 12));
    }
    std::string detail = "KM S(1)=" + fmt(km.at(1.0)) + " S(3)=" + fmt(km.at(3.0)) + "; NLL=" +
                         fmt(nll_loss(half, 1, 2).item(), 10) + "; log-rank chi2=" + fmt(lr.statistic) + " p=" +
                         fmt(lr.p_value) + "; Welch t=" + fmt(w.statistic) + " p=" + fmt(w.p_value);
    for (const auto& f : failed) detail += "; mismatch " + f;
    return {failed.empty(), detail};
}

Outcome knowledge_fixtures() {
    std::mt19937_64 rng(5);
    const Tensor v(oracle::random_matrix(1, 8, rng));
    const double same = knowledge_loss(v, v, &v, &v, &v, &v).item();
    auto unit = [](Index i) {
        Matrix m = Matrix::Zero(1, 3);
        m(0, i) = 1.0;
        return Tensor(m);
    };
    const Tensor e1 = unit(0), e2 = unit(1), e3 = unit(2);
    Matrix c = Matrix::Zero(1, 3);
    c(0, 0) = c(0, 1) = 1.0 / std::sqrt(2.0);
    const Tensor ct(c);
    const double ideal = knowledge_loss(e1, e2, &e1, &e2, &ct, &e3).item();
    const double want = -2.0 - std::sqrt(2.0);
    return {std::abs(same) <= 1e-12 && std::abs(ideal - want) <= 1e-9,
            "identical " + fmt(same, 3) + "; orthogonal ideal " + fmt(ideal, 16) + " (error " + fmt(std::abs(ideal - want), 3) +
                ")"};
}

Outcome cohort_bank() {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> cap(1, 15), len(1, 60), per(0, 4), type(0, 3), grp(1, 4);
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int b = cap(rng);
        CohortBank bank(b);
        std::vector<std::vector<std::pair<long, int>>> pushed(4);
        std::vector<long> last(4, 0);
        const int n = len(rng);
        bool ok = true;
        for (long it = 1; it <= n && ok; ++it) {
            for (int j = per(rng); j > 0; --j) {
                const int t = type(rng);
                const int g = grp(rng);
                bank.push(static_cast<ComponentType>(t), Matrix::Constant(1, 2, static_cast<double>(it)), g, it);
                pushed[static_cast<std::size_t>(t)].push_back({it, g});
                last[static_cast<std::size_t>(t)] = it;
            }
            // A queue holds exactly the pushes from its last b iterations, oldest first.
            for (int t = 0; t < 4; ++t) {
                std::vector<std::pair<long, int>> want;
                for (const auto& e : pushed[static_cast<std::size_t>(t)])
                    if (e.first > last[static_cast<std::size_t>(t)] - b) want.push_back(e);
                std::vector<std::pair<long, int>> got;
                for (const auto& e : bank.entries(static_cast<ComponentType>(t))) got.push_back({e.iteration, e.group});
                ok &= got == want;
            }
        }
        violations += !ok;
    }

    // Enumerated partition cases: every group pattern over four groups,
    // both censor states, every query group.
    int partition_errors = 0, cases = 0;
    for (int mask = 1; mask < 16; ++mask) {
        CohortBank bank(10);
        std::vector<int> present;
        for (int g = 1; g <= 4; ++g) {
            if (mask & (1 << (g - 1))) {
                bank.push(ComponentType::Synergistic, Matrix::Constant(1, 1, g), g, 1);
                present.push_back(g);
            }
        }
        for (int query = 1; query <= 4; ++query) {
            for (int censor : {0, 1}) {
                ++cases;
                std::vector<int> want_pos, want_neg;
                for (int g : present) {
                    const bool positive = censor == 0 ? g == query : g >= query;
                    (positive ? want_pos : want_neg).push_back(g);
                }
                const auto part = bank.partition(ComponentType::Synergistic, query, censor);
                std::vector<int> pos, neg;
                for (Index i = 0; i < part.positives.rows(); ++i) pos.push_back(static_cast<int>(part.positives(i, 0)));
                for (Index i = 0; i < part.negatives.rows(); ++i) neg.push_back(static_cast<int>(part.negatives(i, 0)));
                partition_errors += pos != want_pos || neg != want_neg;
            }
        }
    }
    return {violations == 0 && partition_errors == 0,
            std::to_string(violations) + " of 1000 push sequences break the FIFO law; " + std::to_string(partition_errors) +
                " of " + std::to_string(cases) + " partition cases wrong"};
}

Outcome alignment_dispersion() {
    int improved = 0;
    double worst_ratio = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SyntheticSpec spec;
        spec.num_patients = 30;
        spec.seed = seed;
        const auto syn = generate_synthetic(spec);
        std::vector<Matrix> before, after;
        Anchor anchor;
        for (std::size_t i = 0; i < syn.dataset.size(); ++i) {
            const Matrix c = kmeans(syn.dataset.patients[i].patches, 6, derive_seed({seed, i})).centers;
            before.push_back(c);
            after.push_back(align_centers(c, anchor).aligned);
            update_anchor(anchor, after.back());
        }
        const double b = mean_same_position_distance(before), a = mean_same_position_distance(after);
        improved += a < b;
        worst_ratio = std::max(worst_ratio, a / b);
    }
    return {improved == 20, std::to_string(improved) + "/20 seeds reduce dispersion; worst after/before ratio " + fmt(worst_ratio)};
}

Outcome end_to_end() {
    const auto start = Clock::now();
    const RunConfig base;
    std::map<std::string, double> mean;
    std::string per_cell;
    const auto rows = run_ablation_suite(base, {"variants"}, [](const std::string& msg) {
        if (msg.rfind("ablation", 0) == 0) std::cerr << msg << "\n";
    });
    for (const auto& r : rows) {
        mean[r.cell.label] = r.report.evaluation.mean_cindex;
        per_cell += r.cell.label + " " + fmt(r.report.evaluation.mean_cindex) + " (" + fmt(r.report.wall_seconds, 3) + " s), ";
    }
    const double elapsed = seconds_since(start);
    const double full = mean["full"];
    const bool over_genomics = full >= mean["genomics_only"] + 0.03;
    const bool over_pathology = full >= mean["pathology_only"] + 0.03;
    const bool over_no_cgm = full >= mean["no_cgm"] + 0.01;
    const bool in_time = elapsed < 600.0;
    std::string detail = per_cell + "total " + fmt(elapsed, 4) + " s";
    if (!over_genomics) detail += "; full < genomics_only + 0.03";
    if (!over_pathology) detail += "; full < pathology_only + 0.03";
    if (!over_no_cgm) detail += "; full < no_cgm + 0.01";
    if (!in_time) detail += "; over the 600 s budget";
    return {over_genomics && over_pathology && over_no_cgm && in_time, detail};
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome determinism(const std::string& cli) {
    const fs::path dir = fs::temp_directory_path() / "ccl_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    RunConfig cfg;
    cfg.epochs = 3;
    cfg.synthetic.num_patients = 60;
    std::ofstream(dir / "config.json") << nlohmann::json(cfg).dump(2);
    nlohmann::json reports[2];
    std::string predictions[2];
    for (int run = 0; run < 2; ++run) {
        const fs::path out = dir / ("run" + std::to_string(run));
        const std::string cmd =
            "\"" + cli + "\" -q train --config \"" + (dir / "config.json").string() + "\" --out \"" + out.string() + "\"";
        if (std::system(cmd.c_str()) != 0) return {false, "train invocation failed: " + cmd};
        reports[run] = nlohmann::json::parse(read_file(out / "report.json"));
        predictions[run] = read_file(out / "predictions.csv");
    }
    const double wall0 = reports[0].value("wall_seconds", 0.0), wall1 = reports[1].value("wall_seconds", 0.0);
    for (auto& r : reports) r.erase("wall_seconds");
    const bool same = reports[0] == reports[1] && predictions[0] == predictions[1];
    return {same, std::string(same ? "report.json identical" : "report.json differs") +
                      " apart from wall_seconds (" + fmt(wall0, 3) + " vs " + fmt(wall1, 3) + " s); predictions.csv " +
                      (predictions[0] == predictions[1] ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli = CCL_CLI_PATH;
    std::set<std::string> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string name; std::getline(ss, name, ',');) only.insert(name);
        } else if (a == "--cli" && i + 1 < argc) {
            cli = argv[++i];
        } else {
            std::cerr << "usage: ccl_acceptance [--only name,...] [--cli path]\n";
            return 2;
        }
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient-suite", gradient_suite},
        {"stop-gradient", stop_gradient},
        {"assignment-oracle", assignment_oracle},
        {"cindex-oracle", cindex_oracle},
        {"statistics-fixtures", statistics_fixtures},
        {"knowledge-loss-fixtures", knowledge_fixtures},
        {"cohort-bank", cohort_bank},
        {"alignment-dispersion", alignment_dispersion},
        {"end-to-end-ablation", end_to_end},
        {"determinism", [&] { return determinism(cli); }},
    };
    int failures = 0;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && only.count(name) == 0) continue;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
