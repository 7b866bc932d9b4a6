#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace ccl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ccl_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir / "g");
    fs::create_directories(dir / "p");
    return dir;
}

void write_patient(const fs::path& dir, const std::string& id, int patch_len = 1024, int patches = 2) {
    std::ofstream g(dir / "g" / (id + ".csv"));
    for (int s = 0; s < 6; ++s) g << "sub" << s << ",0.5,1.5,-2\n";
    std::ofstream p(dir / "p" / (id + ".csv"));
    for (int r = 0; r < patches; ++r) {
        for (int c = 0; c < patch_len; ++c) p << (c ? "," : "") << (r + c % 3);
        p << "\n";
    }
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& rows) {
    std::ofstream m(dir / "cohort.csv");
    m << "patient_id,time_days,censor,genomics_file,patches_file\n";
    for (const auto& r : rows) m << r << "\n";
}

CohortDataset times_only(const std::vector<double>& times, const std::vector<int>& censor = {}) {
    CohortDataset ds;
    for (std::size_t i = 0; i < times.size(); ++i) {
        PatientRecord p;
        p.id = "P" + std::to_string(i);
        p.time = times[i];
        p.censor = censor.empty() ? 0 : censor[i];
        ds.patients.push_back(p);
    }
    return ds;
}

}  // namespace

TEST(Cohort, LoadsThreePatientFixture) {
    const auto dir = scratch("load3");
    for (const char* id : {"A", "B", "C"}) write_patient(dir, id);
    write_manifest(dir, {"A,100,0,g/A.csv,p/A.csv", "B,250.5,1,g/B.csv,p/B.csv", "C,30,0,g/C.csv,p/C.csv"});
    const auto ds = load_cohort(dir / "cohort.csv");
    ASSERT_EQ(ds.size(), 3u);
    for (const auto& p : ds.patients) {
        EXPECT_EQ(p.genomics.size(), 6u);
        EXPECT_EQ(p.patches.rows(), 2);
        EXPECT_EQ(p.patches.cols(), kPatchDim);
    }
    EXPECT_EQ(ds.patients[1].censor, 1);
    EXPECT_DOUBLE_EQ(ds.patients[1].time, 250.5);
    EXPECT_EQ(ds.subseq_lens, (std::vector<std::size_t>(6, 3)));
    EXPECT_EQ(ds.subseq_names.front(), "sub0");
}

TEST(Cohort, ShortPatchRowNamesPatient) {
    const auto dir = scratch("short");
    write_patient(dir, "A");
    write_patient(dir, "BAD42", 1023);
    write_manifest(dir, {"A,100,0,g/A.csv,p/A.csv", "BAD42,10,0,g/BAD42.csv,p/BAD42.csv"});
    try {
        load_cohort(dir / "cohort.csv");
        FAIL() << "expected CohortError";
    } catch (const CohortError& e) {
        EXPECT_NE(std::string(e.what()).find("BAD42"), std::string::npos) << e.what();
    }
}

TEST(Cohort, NonPositiveTimeRejected) {
    const auto dir = scratch("zero");
    write_patient(dir, "Z");
    write_manifest(dir, {"Z,0,0,g/Z.csv,p/Z.csv"});
    try {
        load_cohort(dir / "cohort.csv");
        FAIL() << "expected CohortError";
    } catch (const CohortError& e) {
        EXPECT_NE(std::string(e.what()).find("non-positive survival time"), std::string::npos);
    }
}

TEST(Cohort, MissingFileAndBadCensorRejected) {
    const auto dir = scratch("missing");
    write_patient(dir, "A");
    write_manifest(dir, {"A,10,2,g/A.csv,p/A.csv"});
    EXPECT_THROW(load_cohort(dir / "cohort.csv"), CohortError);
    write_manifest(dir, {"A,10,0,g/A.csv,p/none.csv"});
    EXPECT_THROW(load_cohort(dir / "cohort.csv"), CohortError);
}

TEST(Cohort, WriteThenLoadRoundTrips) {
    SyntheticSpec spec;
    spec.num_patients = 4;
    const auto syn = generate_synthetic(spec);
    const auto dir = scratch("roundtrip");
    write_cohort(syn.dataset, dir);
    const auto back = load_cohort(dir / "cohort.csv");
    ASSERT_EQ(back.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& a = syn.dataset.patients[i];
        const auto& b = back.patients[i];
        EXPECT_EQ(a.id, b.id);
        EXPECT_EQ(a.time, b.time);
        EXPECT_EQ(a.genomics, b.genomics);
        EXPECT_TRUE(a.patches == b.patches);
    }
}

TEST(Discretize, QuantileEdges) {
    auto ds = times_only({1, 2, 3, 4, 5, 6, 7, 8});
    discretize_times(ds, 4);
    EXPECT_EQ(ds.bin_edges, (std::vector<double>{2, 4, 6}));
    std::vector<int> bins;
    for (const auto& p : ds.patients) bins.push_back(p.time_bin);
    EXPECT_EQ(bins, (std::vector<int>{1, 1, 2, 2, 3, 3, 4, 4}));
}

TEST(Discretize, SingleBinAndClamping) {
    auto ds = times_only({1, 2, 3, 4, 5, 6, 7, 8, 100}, {0, 0, 0, 0, 0, 0, 0, 0, 1});
    discretize_times(ds, 1);
    for (const auto& p : ds.patients) EXPECT_EQ(p.time_bin, 1);
    discretize_times(ds, 4);
    EXPECT_EQ(ds.patients.back().time_bin, 4);
}

TEST(Groups, RankSplits) {
    auto ds = times_only({1, 2, 3, 4});
    assign_groups(ds, 2);
    EXPECT_EQ(ds.patients[0].group, 1);
    EXPECT_EQ(ds.patients[1].group, 1);
    EXPECT_EQ(ds.patients[2].group, 2);
    EXPECT_EQ(ds.patients[3].group, 2);

    auto ds2 = times_only({5, 1, 3, 2});
    assign_groups(ds2, 4);
    std::vector<int> g;
    for (const auto& p : ds2.patients) g.push_back(p.group);
    EXPECT_EQ(g, (std::vector<int>{4, 1, 3, 2}));

    auto ds3 = times_only({7, 7, 7, 7, 7});
    assign_groups(ds3, 2);
    int ones = 0;
    for (const auto& p : ds3.patients) ones += p.group == 1;
    EXPECT_TRUE(ones == 2 || ones == 3);
    EXPECT_EQ(ds3.patients[0].group, 1);
}

TEST(Folds, DisjointBalancedDeterministic) {
    auto ds = times_only({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    const auto a = make_folds(ds, 5, 3);
    std::vector<int> sizes(5, 0);
    for (int f : a) ++sizes[static_cast<std::size_t>(f)];
    EXPECT_EQ(sizes, (std::vector<int>(5, 2)));
    EXPECT_EQ(make_folds(ds, 5, 3), a);
}

TEST(Synthetic, CensorFractionWithinBinomialInterval) {
    SyntheticSpec spec;
    spec.censor_rate = 0.3;
    spec.num_patients = 500;
    const auto syn = generate_synthetic(spec);
    int censored = 0;
    for (const auto& p : syn.dataset.patients) censored += p.censor;
    EXPECT_NEAR(censored / 500.0, 0.3, 0.07);
}

TEST(Synthetic, DeterministicAndOracleIgnoresSynergyWhenDisabled) {
    SyntheticSpec spec;
    spec.num_patients = 20;
    spec.w_syn = 0.0;
    spec.noise_std = 0.0;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(a.dataset.patients[i].time, b.dataset.patients[i].time);
        EXPECT_TRUE(a.dataset.patients[i].patches == b.dataset.patients[i].patches);
        const auto& z = a.latents[i];
        double s = 0;
        for (double v : z.z_red) s += v;
        for (double v : z.z_g) s += v;
        for (double v : z.z_p) s += v;
        EXPECT_NEAR(a.oracle_risk[i], s, 1e-12);
    }
}
