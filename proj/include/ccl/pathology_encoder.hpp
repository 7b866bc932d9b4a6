#pragma once

// Patch-set reduction: per-slide k-means, alignment of the cluster centers
// to a global anchor by optimal assignment, and the SELU/fc1 encoder that
// maps aligned centers to F_p.

#include <ccl/cohort.hpp>
#include <ccl/genomics_encoder.hpp>
#include <ccl/parameters.hpp>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace ccl {

struct KMeansResult {
    Matrix centers;                // k x d
    std::vector<int> labels;       // one per (possibly duplicated) point
    std::vector<double> objective; // within-cluster sum of squares after each assignment step
    int iterations = 0;
};

inline constexpr int kKMeansMaxIterations = 50;
inline constexpr double kKMeansTolerance = 1e-4;

// k-means++ seeding followed by Lloyd iterations. Fewer than k points are
// cyclically duplicated up to k; an empty cluster is re-seeded with the point
// farthest from its current center.
inline KMeansResult kmeans(const Matrix& patches, int k, std::uint64_t seed, int max_iterations = kKMeansMaxIterations,
                           double tolerance = kKMeansTolerance) {
    if (patches.rows() < 1) throw DimensionError("kmeans: need at least one patch");
    if (k < 1) throw DimensionError("kmeans: k must be >= 1");
    const Index d = patches.cols();
    Matrix points;
    if (patches.rows() < k) {
        points.resize(k, d);
        for (Index i = 0; i < k; ++i) points.row(i) = patches.row(i % patches.rows());
    } else {
        points = patches;
    }
    const Index m = points.rows();
    KMeansResult res;
    if (m == k) {
        // Every point is its own cluster.
        res.centers = points;
        res.labels.resize(static_cast<std::size_t>(m));
        std::iota(res.labels.begin(), res.labels.end(), 0);
        res.objective.push_back(0.0);
        return res;
    }
    std::mt19937_64 rng(seed);

    auto sqdist = [&](Index p, const Matrix& centers, Index c) { return (points.row(p) - centers.row(c)).squaredNorm(); };

    Matrix centers(k, d);
    {
        std::uniform_int_distribution<Index> first(0, m - 1);
        centers.row(0) = points.row(first(rng));
        std::vector<double> nearest(static_cast<std::size_t>(m));
        for (Index p = 0; p < m; ++p) nearest[static_cast<std::size_t>(p)] = sqdist(p, centers, 0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (Index c = 1; c < k; ++c) {
            const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
            Index chosen = 0;
            if (total > 0.0) {
                double target = unit(rng) * total;
                chosen = m - 1;
                for (Index p = 0; p < m; ++p) {
                    target -= nearest[static_cast<std::size_t>(p)];
                    if (target < 0.0) {
                        chosen = p;
                        break;
                    }
                }
            } else {
                chosen = c % m;
            }
            centers.row(c) = points.row(chosen);
            for (Index p = 0; p < m; ++p) {
                nearest[static_cast<std::size_t>(p)] = std::min(nearest[static_cast<std::size_t>(p)], sqdist(p, centers, c));
            }
        }
    }

    std::vector<int> labels(static_cast<std::size_t>(m), 0);
    std::vector<double> dist(static_cast<std::size_t>(m), 0.0);
    for (int it = 0; it < max_iterations; ++it) {
        double objective = 0.0;
        for (Index p = 0; p < m; ++p) {
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (Index c = 0; c < k; ++c) {
                const double dd = sqdist(p, centers, c);
                if (dd < best) {
                    best = dd;
                    arg = static_cast<int>(c);
                }
            }
            labels[static_cast<std::size_t>(p)] = arg;
            dist[static_cast<std::size_t>(p)] = best;
            objective += best;
        }
        res.objective.push_back(objective);

        Matrix updated = Matrix::Zero(k, d);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Index p = 0; p < m; ++p) {
            updated.row(labels[static_cast<std::size_t>(p)]) += points.row(p);
            ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(p)])];
        }
        std::vector<bool> taken(static_cast<std::size_t>(m), false);
        for (Index c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                updated.row(c) /= counts[static_cast<std::size_t>(c)];
                continue;
            }
            Index far = -1;
            for (Index p = 0; p < m; ++p) {
                if (taken[static_cast<std::size_t>(p)]) continue;
                if (far < 0 || dist[static_cast<std::size_t>(p)] > dist[static_cast<std::size_t>(far)]) far = p;
            }
            if (far < 0) far = 0;
            taken[static_cast<std::size_t>(far)] = true;
            dist[static_cast<std::size_t>(far)] = 0.0;
            updated.row(c) = points.row(far);
        }
        double shift = 0.0;
        for (Index c = 0; c < k; ++c) shift = std::max(shift, (updated.row(c) - centers.row(c)).norm());
        centers = std::move(updated);
        res.iterations = it + 1;
        if (shift < tolerance) break;
    }
    res.centers = std::move(centers);
    res.labels = std::move(labels);
    return res;
}

// ---------------------------------------------------------------------------
// Assignment

// Hungarian algorithm (shortest augmenting paths with potentials) on a
// square matrix. Returns perm with perm[row] = column, maximizing
// sum_i score(i, perm[i]).
inline std::vector<int> max_weight_assignment(const Matrix& score) {
    if (score.rows() != score.cols()) throw DimensionError("assignment: matrix must be square, got " + shape_str(score));
    const int n = static_cast<int>(score.rows());
    if (n == 0) return {};
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
    auto cost = [&](int i, int j) { return -score(i - 1, j - 1); };
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
        do {
            used[static_cast<std::size_t>(j0)] = true;
            const int i0 = p[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0, j) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> perm(static_cast<std::size_t>(n), 0);
    for (int j = 1; j <= n; ++j) perm[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return perm;
}

// Cosine similarity of every anchor row (i) with every center row (j).
inline Matrix similarity_matrix(const Matrix& anchor, const Matrix& centers) {
    if (anchor.cols() != centers.cols()) {
        throw DimensionError("similarity_matrix: " + shape_str(anchor) + " vs " + shape_str(centers));
    }
    const Eigen::VectorXd na = anchor.rowwise().norm();
    const Eigen::VectorXd nc = centers.rowwise().norm();
    Matrix sim = anchor * centers.transpose();
    for (Index i = 0; i < sim.rows(); ++i) {
        for (Index j = 0; j < sim.cols(); ++j) sim(i, j) /= std::max(na(i) * nc(j), kCosineEps);
    }
    return sim;
}

struct Anchor {
    Matrix centers;  // k x 1024
    double tau = 0.1;
    bool initialized = false;
    bool frozen = false;

    explicit Anchor(double update_ratio = 0.1) : tau(update_ratio) {
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("anchor: tau must be in (0, 1]");
    }

    void freeze() { frozen = true; }
    void unfreeze() { frozen = false; }
};

struct Alignment {
    Matrix aligned;                // aligned.row(i) = centers.row(permutation[i])
    std::vector<int> permutation;
    double total_similarity = 0.0;
};

inline Alignment align_to(const Matrix& centers, const Matrix& anchor_centers) {
    if (centers.rows() != anchor_centers.rows() || centers.cols() != anchor_centers.cols()) {
        throw DimensionError("align_centers: centers " + shape_str(centers) + " vs anchor " + shape_str(anchor_centers));
    }
    const Matrix sim = similarity_matrix(anchor_centers, centers);
    Alignment a;
    a.permutation = max_weight_assignment(sim);
    a.aligned.resize(centers.rows(), centers.cols());
    for (Index i = 0; i < centers.rows(); ++i) {
        const int j = a.permutation[static_cast<std::size_t>(i)];
        a.aligned.row(i) = centers.row(j);
        a.total_similarity += sim(i, j);
    }
    return a;
}

// An uninitialized anchor adopts the centers as-is (identity permutation),
// unless it is frozen.
inline Alignment align_centers(const Matrix& centers, Anchor& anchor) {
    if (!anchor.initialized) {
        if (!anchor.frozen) {
            anchor.centers = centers;
            anchor.initialized = true;
        }
        Alignment a;
        a.aligned = centers;
        a.permutation.resize(static_cast<std::size_t>(centers.rows()));
        std::iota(a.permutation.begin(), a.permutation.end(), 0);
        const Matrix sim = similarity_matrix(centers, centers);
        a.total_similarity = sim.trace();
        return a;
    }
    return align_to(centers, anchor.centers);
}

inline void update_anchor(Anchor& anchor, const Matrix& aligned) {
    if (anchor.frozen) throw ContractError("update_anchor: anchor is frozen (evaluation mode)");
    if (!anchor.initialized) throw ContractError("update_anchor: anchor not initialized");
    if (aligned.rows() != anchor.centers.rows() || aligned.cols() != anchor.centers.cols()) {
        throw DimensionError("update_anchor: aligned " + shape_str(aligned) + " vs anchor " + shape_str(anchor.centers));
    }
    anchor.centers = (1.0 - anchor.tau) * anchor.centers + anchor.tau * aligned;
}

// Mean L2 distance between centers at the same ordinal position, averaged
// over all patient pairs and positions.
inline double mean_same_position_distance(const std::vector<Matrix>& per_patient) {
    if (per_patient.size() < 2) return 0.0;
    const Index k = per_patient.front().rows();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < per_patient.size(); ++a) {
        for (std::size_t b = a + 1; b < per_patient.size(); ++b) {
            for (Index i = 0; i < k; ++i) {
                total += (per_patient[a].row(i) - per_patient[b].row(i)).norm();
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Encoder

class PathologyEncoder {
   public:
    PathologyEncoder() = default;
    PathologyEncoder(ParameterStore& store, int k, std::mt19937_64& rng, Index dim = kModelDim,
                     const std::string& prefix = "pathology")
        : k_(k) {
        if (k < 1) throw DimensionError("pathology encoder: k must be >= 1");
        snn_ = Linear(store, prefix + ".snn", kPatchDim, dim, rng);
        aggregate_ = Linear(store, prefix + ".fc_agg", dim * k, dim, rng);
    }

    int k() const { return k_; }

    // Centers are constants: the clustering step is not differentiated.
    Tensor operator()(const Matrix& aligned) const {
        if (aligned.rows() != k_ || aligned.cols() != snn_.in_features()) {
            throw DimensionError("pathology encoder: centers " + shape_str(aligned) + ", expected " +
                                 shape_str(k_, snn_.in_features()));
        }
        const Tensor hidden = selu(snn_(Tensor(aligned)));
        return aggregate_(reshape(hidden, 1, hidden.size()));
    }

    const Linear& snn() const { return snn_; }
    const Linear& aggregator() const { return aggregate_; }

   private:
    int k_ = 0;
    Linear snn_;
    Linear aggregate_;
};

}  // namespace ccl
