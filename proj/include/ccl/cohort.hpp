#pragma once

// Patient cohorts: manifest ingestion, time discretization, risk groups,
// cross-validation folds and a synthetic generator with planted
// redundant / unique / synergistic signal.

#include <ccl/tensor.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace ccl {

inline constexpr Index kPatchDim = 1024;
inline constexpr std::size_t kNumSubsequences = 6;

struct PatientRecord {
    std::string id;
    std::vector<std::vector<double>> genomics;  // kNumSubsequences entries
    Matrix patches;                             // m x kPatchDim
    double time = 0.0;                          // days
    int censor = 0;                             // 1 = censored
    int time_bin = 0;                           // 1..n once discretized
    int group = 0;                              // 1..r, 1 = shortest times
    int fold = -1;
};

struct CohortDataset {
    std::vector<PatientRecord> patients;
    std::vector<std::string> subseq_names;
    std::vector<std::size_t> subseq_lens;
    std::vector<double> bin_edges;
    std::vector<double> group_edges;
    int bins_n = 0;
    int groups_r = 0;

    std::size_t size() const { return patients.size(); }
};

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CohortError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        lines.push_back(line);
    }
    return lines;
}

inline CohortError patient_error(const std::string& id, const std::string& field, const std::string& what) {
    return CohortError("patient " + id + ": " + field + ": " + what);
}

}  // namespace detail

inline const char* kManifestHeader = "patient_id,time_days,censor,genomics_file,patches_file";

inline CohortDataset load_cohort(const std::filesystem::path& manifest_path) {
    const auto lines = detail::read_lines(manifest_path);
    const auto base = manifest_path.parent_path();
    CohortDataset ds;
    bool header_seen = false;
    for (const auto& raw : lines) {
        std::string_view line = detail::trim(raw);
        if (line.front() == '#') {
            constexpr std::string_view key = "#subseq_lens=";
            if (line.substr(0, key.size()) == key) {
                for (auto tok : detail::split_csv(line.substr(key.size()))) {
                    double v = 0;
                    if (!detail::parse_double(tok, v) || v < 1 || v != std::floor(v)) {
                        throw CohortError("manifest: bad subseq_lens entry '" + std::string(tok) + "'");
                    }
                    ds.subseq_lens.push_back(static_cast<std::size_t>(v));
                }
                if (ds.subseq_lens.size() != kNumSubsequences) {
                    throw CohortError("manifest: subseq_lens must list 6 lengths, got " +
                                      std::to_string(ds.subseq_lens.size()));
                }
            }
            continue;
        }
        if (!header_seen) {
            if (line != kManifestHeader) {
                throw CohortError("manifest: expected header '" + std::string(kManifestHeader) + "'");
            }
            header_seen = true;
            continue;
        }
        const auto cols = detail::split_csv(line);
        const std::string id = cols.empty() ? std::string("?") : std::string(detail::trim(cols[0]));
        if (cols.size() != 5) {
            throw detail::patient_error(id, "manifest row", "expected 5 columns, got " + std::to_string(cols.size()));
        }
        PatientRecord p;
        p.id = id;
        if (!detail::parse_double(cols[1], p.time) || !std::isfinite(p.time)) {
            throw detail::patient_error(id, "time_days", "not a number");
        }
        if (p.time <= 0.0) throw detail::patient_error(id, "time_days", "non-positive survival time");
        const auto c = detail::trim(cols[2]);
        if (c == "0") {
            p.censor = 0;
        } else if (c == "1") {
            p.censor = 1;
        } else {
            throw detail::patient_error(id, "censor", "must be 0 or 1, got '" + std::string(c) + "'");
        }

        const auto gpath = base / std::string(detail::trim(cols[3]));
        std::vector<std::string> glines;
        try {
            glines = detail::read_lines(gpath);
        } catch (const CohortError&) {
            throw detail::patient_error(id, "genomics_file", "missing file " + gpath.string());
        }
        if (glines.size() != kNumSubsequences) {
            throw detail::patient_error(id, "genomics_file",
                                        "expected 6 sub-sequences, got " + std::to_string(glines.size()));
        }
        std::vector<std::string> names;
        for (std::size_t i = 0; i < glines.size(); ++i) {
            const auto toks = detail::split_csv(glines[i]);
            names.emplace_back(detail::trim(toks[0]));
            std::vector<double> vals;
            for (std::size_t j = 1; j < toks.size(); ++j) {
                double v = 0;
                if (!detail::parse_double(toks[j], v) || !std::isfinite(v)) {
                    throw detail::patient_error(id, "genomics sub-sequence " + std::to_string(i),
                                                "bad value '" + std::string(toks[j]) + "'");
                }
                vals.push_back(v);
            }
            if (vals.empty()) {
                throw detail::patient_error(id, "genomics sub-sequence " + std::to_string(i), "empty");
            }
            p.genomics.push_back(std::move(vals));
        }
        if (ds.subseq_lens.empty()) {
            for (const auto& g : p.genomics) ds.subseq_lens.push_back(g.size());
        }
        for (std::size_t i = 0; i < kNumSubsequences; ++i) {
            if (p.genomics[i].size() != ds.subseq_lens[i]) {
                throw detail::patient_error(id, "genomics sub-sequence " + std::to_string(i),
                                            "length " + std::to_string(p.genomics[i].size()) + ", expected " +
                                                std::to_string(ds.subseq_lens[i]));
            }
        }
        if (ds.subseq_names.empty()) ds.subseq_names = names;

        const auto ppath = base / std::string(detail::trim(cols[4]));
        std::vector<std::string> plines;
        try {
            plines = detail::read_lines(ppath);
        } catch (const CohortError&) {
            throw detail::patient_error(id, "patches_file", "missing file " + ppath.string());
        }
        if (plines.empty()) throw detail::patient_error(id, "patches_file", "no patches");
        p.patches.resize(static_cast<Index>(plines.size()), kPatchDim);
        for (std::size_t r = 0; r < plines.size(); ++r) {
            const auto toks = detail::split_csv(plines[r]);
            if (toks.size() != static_cast<std::size_t>(kPatchDim)) {
                throw detail::patient_error(id, "patches_file",
                                            "patch row " + std::to_string(r) + " has length " +
                                                std::to_string(toks.size()) + ", expected 1024");
            }
            for (std::size_t j = 0; j < toks.size(); ++j) {
                double v = 0;
                if (!detail::parse_double(toks[j], v) || !std::isfinite(v)) {
                    throw detail::patient_error(id, "patches_file",
                                                "bad value at row " + std::to_string(r) + " column " + std::to_string(j));
                }
                p.patches(static_cast<Index>(r), static_cast<Index>(j)) = v;
            }
        }
        ds.patients.push_back(std::move(p));
    }
    if (!header_seen) throw CohortError("manifest: missing header");
    return ds;
}

// Writes the manifest layout read by load_cohort: cohort.csv plus
// genomics/<id>.csv and patches/<id>.csv.
inline void write_cohort(const CohortDataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "genomics");
    fs::create_directories(dir / "patches");
    std::ofstream manifest(dir / "cohort.csv", std::ios::binary);
    if (!manifest) throw CohortError("cannot write " + (dir / "cohort.csv").string());
    manifest << "#subseq_lens=";
    for (std::size_t i = 0; i < ds.subseq_lens.size(); ++i) manifest << (i ? "," : "") << ds.subseq_lens[i];
    manifest << "\n" << kManifestHeader << "\n";
    for (const auto& p : ds.patients) {
        const std::string gfile = "genomics/" + p.id + ".csv";
        const std::string pfile = "patches/" + p.id + ".csv";
        manifest << p.id << "," << detail::format_double(p.time) << "," << p.censor << "," << gfile << "," << pfile
                 << "\n";
        std::ofstream g(dir / gfile, std::ios::binary);
        for (std::size_t i = 0; i < p.genomics.size(); ++i) {
            g << (i < ds.subseq_names.size() ? ds.subseq_names[i] : "subseq" + std::to_string(i));
            for (double v : p.genomics[i]) g << "," << detail::format_double(v);
            g << "\n";
        }
        std::ofstream pf(dir / pfile, std::ios::binary);
        for (Index r = 0; r < p.patches.rows(); ++r) {
            for (Index c = 0; c < p.patches.cols(); ++c) pf << (c ? "," : "") << detail::format_double(p.patches(r, c));
            pf << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Derived labels

// Equal-frequency edges over uncensored times; every patient is placed in
// the interval containing its time, clamped to 1..n.
inline void discretize_times(CohortDataset& ds, int n) {
    if (n < 1) throw ConfigError("bins_n must be >= 1");
    std::vector<double> uncensored;
    for (const auto& p : ds.patients) {
        if (p.censor == 0) uncensored.push_back(p.time);
    }
    if (uncensored.size() < static_cast<std::size_t>(n)) {
        throw ConfigError("discretize_times: " + std::to_string(uncensored.size()) +
                          " uncensored patients, need at least " + std::to_string(n));
    }
    std::sort(uncensored.begin(), uncensored.end());
    const std::size_t count = uncensored.size();
    ds.bin_edges.clear();
    for (int q = 1; q < n; ++q) {
        // Inverse empirical CDF at q/n.
        const std::size_t rank = (static_cast<std::size_t>(q) * count + static_cast<std::size_t>(n) - 1) /
                                 static_cast<std::size_t>(n);
        const double edge = uncensored[rank - 1];
        if (!ds.bin_edges.empty() && edge <= ds.bin_edges.back()) {
            throw ConfigError("discretize_times: tied quantiles give an empty interval at edge " + std::to_string(q));
        }
        ds.bin_edges.push_back(edge);
    }
    for (auto& p : ds.patients) {
        const auto below = std::lower_bound(ds.bin_edges.begin(), ds.bin_edges.end(), p.time) - ds.bin_edges.begin();
        p.time_bin = std::clamp(static_cast<int>(below) + 1, 1, n);
    }
    ds.bins_n = n;
}

// Equal-count split of all patients by survival time. Group 1 holds the
// shortest times; ties keep dataset order.
inline void assign_groups(CohortDataset& ds, int r) {
    const std::size_t count = ds.patients.size();
    if (r < 1 || static_cast<std::size_t>(r) > count) {
        throw ConfigError("assign_groups: r=" + std::to_string(r) + " with " + std::to_string(count) + " patients");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ds.patients[a].time < ds.patients[b].time; });
    ds.group_edges.assign(static_cast<std::size_t>(r - 1), 0.0);
    for (std::size_t pos = 0; pos < count; ++pos) {
        const int g = static_cast<int>(pos * static_cast<std::size_t>(r) / count) + 1;
        ds.patients[order[pos]].group = g;
        if (g < r) ds.group_edges[static_cast<std::size_t>(g - 1)] = ds.patients[order[pos]].time;
    }
    ds.groups_r = r;
}

inline std::vector<int> make_folds(CohortDataset& ds, int folds, std::uint64_t seed) {
    const std::size_t count = ds.patients.size();
    if (folds < 1 || static_cast<std::size_t>(folds) > count) {
        throw ConfigError("make_folds: " + std::to_string(folds) + " folds for " + std::to_string(count) + " patients");
    }
    std::vector<std::size_t> perm(count);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> labels(count);
    for (std::size_t pos = 0; pos < count; ++pos) {
        labels[perm[pos]] = static_cast<int>(pos * static_cast<std::size_t>(folds) / count);
    }
    for (std::size_t i = 0; i < count; ++i) ds.patients[i].fold = labels[i];
    return labels;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts

struct SyntheticSpec {
    std::size_t num_patients = 500;
    std::size_t dim_red = 3;
    std::size_t dim_g = 3;
    std::size_t dim_p = 3;
    double w_red = 1.0;
    double w_g = 1.0;
    double w_p = 1.0;
    double w_syn = 1.0;
    double censor_rate = 0.2;
    std::size_t patches_min = 8;
    std::size_t patches_max = 24;
    std::size_t phenotypes = 6;  // shared patch prototypes, present in every slide
    double noise_std = 0.1;
    double time_scale_days = 365.0;
    std::vector<std::size_t> subseq_lens = {16, 16, 16, 16, 16, 16};
    std::uint64_t seed = 0;

    void validate() const {
        if (num_patients < 1) throw ConfigError("synthetic: num_patients must be >= 1");
        if (w_red < 0 || w_g < 0 || w_p < 0 || w_syn < 0) throw ConfigError("synthetic: weights must be >= 0");
        if (w_red + w_g + w_p + w_syn <= 0) throw ConfigError("synthetic: at least one weight must be positive");
        if (!(censor_rate >= 0.0 && censor_rate < 1.0)) throw ConfigError("synthetic: censor_rate must be in [0,1)");
        if (patches_min < 1 || patches_max < patches_min) throw ConfigError("synthetic: bad patches_per_patient range");
        if (phenotypes < 1) throw ConfigError("synthetic: phenotypes must be >= 1");
        if (noise_std < 0) throw ConfigError("synthetic: noise_std must be >= 0");
        if (subseq_lens.size() != kNumSubsequences) throw ConfigError("synthetic: need 6 sub-sequence lengths");
        for (auto l : subseq_lens) {
            if (l < 1) throw ConfigError("synthetic: sub-sequence lengths must be >= 1");
        }
    }

    bool operator==(const SyntheticSpec&) const = default;
};

struct SyntheticLatents {
    std::vector<double> z_red, z_g, z_p;
    int s1 = 0;
    int s2 = 0;
};

struct SyntheticCohort {
    CohortDataset dataset;
    std::vector<double> oracle_risk;  // exact log-hazard per patient
    std::vector<SyntheticLatents> latents;
};

inline double synthetic_log_hazard(const SyntheticSpec& spec, const SyntheticLatents& z) {
    auto total = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
    return spec.w_red * total(z.z_red) + spec.w_g * total(z.z_g) + spec.w_p * total(z.z_p) +
           spec.w_syn * static_cast<double>(z.s1 ^ z.s2);
}

// Genomics are noisy linear images of [z_red, z_g, s1]; each patch is a
// phenotype prototype plus a linear image of [z_red, z_p, s2] plus jitter.
// Event times are exponential with rate exp(log-hazard) / time_scale_days.
inline SyntheticCohort generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    const Index gdim = static_cast<Index>(spec.dim_red + spec.dim_g + 1);
    const Index pdim = static_cast<Index>(spec.dim_red + spec.dim_p + 1);
    const Index glen = static_cast<Index>(std::accumulate(spec.subseq_lens.begin(), spec.subseq_lens.end(), std::size_t{0}));

    auto gaussian = [&](Index rows, Index cols, double sd) {
        Matrix m(rows, cols);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = sd * normal(rng);
        return m;
    };
    const Matrix gproj = gaussian(gdim, glen, 1.0 / std::sqrt(static_cast<double>(gdim)));
    const Matrix pproj = gaussian(pdim, kPatchDim, 1.0 / std::sqrt(static_cast<double>(pdim)));
    const Matrix prototypes = gaussian(static_cast<Index>(spec.phenotypes), kPatchDim, 1.0);

    SyntheticCohort out;
    auto& ds = out.dataset;
    ds.subseq_lens = spec.subseq_lens;
    ds.subseq_names = {"tumor_suppression", "oncogenesis", "protein_kinases",
                       "cellular_differentiation", "transcription", "cytokines_growth"};
    std::uniform_int_distribution<std::size_t> patch_count(spec.patches_min, spec.patches_max);
    std::uniform_int_distribution<std::size_t> phenotype(0, spec.phenotypes - 1);

    for (std::size_t i = 0; i < spec.num_patients; ++i) {
        SyntheticLatents z;
        auto draw = [&](std::size_t d) {
            std::vector<double> v(d);
            for (auto& x : v) x = normal(rng);
            return v;
        };
        z.z_red = draw(spec.dim_red);
        z.z_g = draw(spec.dim_g);
        z.z_p = draw(spec.dim_p);
        z.s1 = uniform(rng) < 0.5 ? 1 : 0;
        z.s2 = uniform(rng) < 0.5 ? 1 : 0;

        Eigen::RowVectorXd glat(gdim);
        Index at = 0;
        for (double v : z.z_red) glat(at++) = v;
        for (double v : z.z_g) glat(at++) = v;
        glat(at) = 2.0 * z.s1 - 1.0;
        Eigen::RowVectorXd plat(pdim);
        at = 0;
        for (double v : z.z_red) plat(at++) = v;
        for (double v : z.z_p) plat(at++) = v;
        plat(at) = 2.0 * z.s2 - 1.0;

        PatientRecord p;
        {
            std::ostringstream id;
            id << "P" << std::setw(4) << std::setfill('0') << i;
            p.id = id.str();
        }
        const Eigen::RowVectorXd gvals = glat * gproj;
        Index offset = 0;
        for (std::size_t s = 0; s < kNumSubsequences; ++s) {
            std::vector<double> seq(spec.subseq_lens[s]);
            for (auto& v : seq) v = gvals(offset++) + spec.noise_std * normal(rng);
            p.genomics.push_back(std::move(seq));
        }

        const Eigen::RowVectorXd signal = plat * pproj;
        const std::size_t m = patch_count(rng);
        p.patches.resize(static_cast<Index>(m), kPatchDim);
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t ph = r < spec.phenotypes ? r : phenotype(rng);
            for (Index c = 0; c < kPatchDim; ++c) {
                p.patches(static_cast<Index>(r), c) =
                    prototypes(static_cast<Index>(ph), c) + signal(c) + spec.noise_std * normal(rng);
            }
        }
        // Slide order carries no phenotype information.
        for (Index r = static_cast<Index>(m) - 1; r > 0; --r) {
            std::uniform_int_distribution<Index> pick(0, r);
            const Index j = pick(rng);
            if (j != r) p.patches.row(r).swap(p.patches.row(j));
        }

        const double score = synthetic_log_hazard(spec, z);
        const double rate = std::exp(score) / spec.time_scale_days;
        double t = -std::log1p(-uniform(rng)) / rate;
        t = std::max(t, 1e-6);
        if (uniform(rng) < spec.censor_rate) {
            t = std::max(uniform(rng) * t, 1e-6);
            p.censor = 1;
        }
        p.time = t;
        ds.patients.push_back(std::move(p));
        out.oracle_risk.push_back(score);
        out.latents.push_back(std::move(z));
    }
    return out;
}

}  // namespace ccl
