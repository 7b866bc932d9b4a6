#pragma once

// Slow, obviously-correct reference implementations used only by tests.

#include <ccl/harness.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using ccl::Index;
using ccl::Matrix;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c = Matrix::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Harrell's C by enumerating every ordered pair.
inline double cindex(const std::vector<ccl::SurvivalOutcome>& o) {
    double concordant = 0.0;
    long comparable = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (o[i].censor != 0) continue;
        for (std::size_t j = 0; j < o.size(); ++j) {
            if (i == j || !(o[i].time < o[j].time)) continue;
            ++comparable;
            if (o[i].risk > o[j].risk) concordant += 1.0;
            else if (o[i].risk == o[j].risk) concordant += 0.5;
        }
    }
    return concordant / static_cast<double>(comparable);
}

// Best total over all k! permutations; returns the best score.
inline double best_assignment(const Matrix& s) {
    std::vector<int> perm(static_cast<std::size_t>(s.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = -std::numeric_limits<double>::infinity();
    do {
        double t = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) t += s(static_cast<Index>(i), perm[i]);
        best = std::max(best, t);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Product-limit estimate at time t, straight from the definition.
inline double km_at(const std::vector<ccl::SurvivalOutcome>& o, double t) {
    std::vector<double> times;
    for (const auto& x : o)
        if (x.censor == 0 && x.time <= t) times.push_back(x.time);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    double s = 1.0;
    for (double u : times) {
        int at_risk = 0, events = 0;
        for (const auto& x : o) {
            if (x.time >= u) ++at_risk;
            if (x.time == u && x.censor == 0) ++events;
        }
        s *= 1.0 - static_cast<double>(events) / at_risk;
    }
    return s;
}

// Fourth-order central difference of t -> at(t) at 0, built from the central
// differences over h and 2h. Those two differ by O(h^2) on smooth stretches;
// a larger gap means a kink (SELU at 0, |x| at 0) lies inside the stencil, so
// the step shrinks tenfold, up to three times. Without agreement the most
// self-consistent level wins.
inline double kink_safe_derivative(const std::function<double(double)>& at, double h) {
    double best = 0.0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int level = 0; level < 4; ++level, h /= 10) {
        const double near = (at(h) - at(-h)) / (2 * h);
        const double wide = (at(2 * h) - at(-2 * h)) / (4 * h);
        const double gap = std::abs(near - wide) / std::max({std::abs(near), std::abs(wide), 1e-4});
        if (gap < best_gap) {
            best_gap = gap;
            best = (4 * near - wide) / 3;
        }
        if (gap <= 1e-5) break;
    }
    return best;
}

inline double numeric_grad(ccl::Tensor& t, Index i, const std::function<double()>& f, double h = 1e-4) {
    const double w0 = t.value().data()[i];
    const double g = kink_safe_derivative(
        [&](double d) {
            t.mutable_value().data()[i] = w0 + d;
            return f();
        },
        h * std::max(1.0, std::abs(w0)));
    t.mutable_value().data()[i] = w0;
    return g;
}

// Whole-model checks divide by at least this, so parameters whose true
// gradient is exactly zero (e.g. attention key biases) are judged on absolute
// error against the roundoff of the difference quotient.
inline constexpr double kModelGradientFloor = 1e-4;

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle
