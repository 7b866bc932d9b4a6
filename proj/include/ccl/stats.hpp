#pragma once

// Censoring-aware evaluation statistics.

#include <ccl/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace ccl {

struct SurvivalOutcome {
    double time = 0.0;  // days, > 0
    int censor = 0;     // 1 = censored
    double risk = 0.0;  // higher = riskier
};

// ---------------------------------------------------------------------------
// Special functions

namespace special {

inline constexpr double kEps = 1e-15;
inline constexpr int kMaxIter = 10000;

// Regularized lower incomplete gamma P(a, x), series expansion (x < a + 1).
inline double gamma_p_series(double a, double x) {
    double sum = 1.0 / a;
    double term = sum;
    double ap = a;
    for (int n = 0; n < kMaxIter; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * kEps) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x), Lentz continued fraction (x >= a + 1).
inline double gamma_q_fraction(double a, double x) {
    const double tiny = std::numeric_limits<double>::min() / kEps;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

inline double gamma_q(double a, double x) {
    if (x <= 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_fraction(a, x);
}

inline double beta_fraction(double a, double b, double x) {
    const double tiny = std::numeric_limits<double>::min() / kEps;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m < kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

// Regularized incomplete beta I_x(a, b).
inline double beta_inc(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
    return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

// Upper tail of chi-square with k degrees of freedom.
inline double chi2_sf(double x, double k) { return gamma_q(0.5 * k, 0.5 * x); }

// Two-sided tail of Student's t with df degrees of freedom.
inline double student_t_two_sided(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    return beta_inc(0.5 * df, 0.5, df / (df + t * t));
}

}  // namespace special

// ---------------------------------------------------------------------------
// Concordance

struct ConcordanceCounts {
    std::int64_t comparable = 0;
    std::int64_t concordant = 0;
    std::int64_t tied = 0;

    double index() const {
        return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) / static_cast<double>(comparable);
    }
};

namespace detail {

class Fenwick {
   public:
    explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
    void add(std::size_t i) {
        for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
    }
    // Count of inserted positions < i.
    std::int64_t prefix(std::size_t i) const {
        std::int64_t s = 0;
        for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

   private:
    std::vector<std::int64_t> tree_;
};

}  // namespace detail

// Pairs (i, j) with t_i < t_j and i uncensored are comparable; concordant
// when risk_i > risk_j, half credit on tied risk. O(N log N).
inline ConcordanceCounts concordance_counts(std::span<const SurvivalOutcome> outcomes) {
    const std::size_t n = outcomes.size();
    std::vector<double> risks(n);
    for (std::size_t i = 0; i < n; ++i) risks[i] = outcomes[i].risk;
    std::sort(risks.begin(), risks.end());
    risks.erase(std::unique(risks.begin(), risks.end()), risks.end());
    auto rank = [&](double r) {
        return static_cast<std::size_t>(std::lower_bound(risks.begin(), risks.end(), r) - risks.begin());
    };

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return outcomes[a].time > outcomes[b].time; });

    ConcordanceCounts counts;
    detail::Fenwick later(risks.size());  // patients with strictly larger times
    std::int64_t inserted = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && outcomes[order[j]].time == outcomes[order[i]].time) ++j;
        for (std::size_t q = i; q < j; ++q) {
            const auto& o = outcomes[order[q]];
            if (o.censor != 0) continue;
            const std::size_t r = rank(o.risk);
            const std::int64_t below = later.prefix(r);
            const std::int64_t equal = later.prefix(r + 1) - below;
            counts.comparable += inserted;
            counts.concordant += below;
            counts.tied += equal;
        }
        for (std::size_t q = i; q < j; ++q) later.add(rank(outcomes[order[q]].risk));
        inserted += static_cast<std::int64_t>(j - i);
        i = j;
    }
    return counts;
}

inline double concordance_index(std::span<const SurvivalOutcome> outcomes) {
    const auto counts = concordance_counts(outcomes);
    if (counts.comparable == 0) throw UndefinedStatistic("concordance_index: no comparable pairs");
    return counts.index();
}

// ---------------------------------------------------------------------------
// Kaplan-Meier

struct KMCurve {
    std::vector<double> times;     // distinct event times, ascending
    std::vector<double> survival;  // S just after each time
    std::vector<int> at_risk;
    std::vector<int> events;

    // Step function; 1 before the first event time.
    double at(double t) const {
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        if (it == times.begin()) return 1.0;
        return survival[static_cast<std::size_t>(it - times.begin()) - 1];
    }
};

inline KMCurve km_curve(std::span<const SurvivalOutcome> outcomes) {
    std::vector<std::size_t> order(outcomes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return outcomes[a].time < outcomes[b].time; });
    KMCurve curve;
    int at_risk = static_cast<int>(outcomes.size());
    double s = 1.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = outcomes[order[i]].time;
        int deaths = 0;
        int leaving = 0;
        while (i < order.size() && outcomes[order[i]].time == t) {
            if (outcomes[order[i]].censor == 0) ++deaths;
            ++leaving;
            ++i;
        }
        if (deaths > 0) {
            s *= static_cast<double>(at_risk - deaths) / static_cast<double>(at_risk);
            curve.times.push_back(t);
            curve.survival.push_back(s);
            curve.at_risk.push_back(at_risk);
            curve.events.push_back(deaths);
        }
        at_risk -= leaving;
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Tests

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double df = 1.0;
};

// Two-group log-rank test, chi-square with one degree of freedom.
inline TestResult logrank_test(std::span<const SurvivalOutcome> group_a, std::span<const SurvivalOutcome> group_b) {
    if (group_a.empty() || group_b.empty()) throw UndefinedStatistic("logrank_test: empty group");
    struct Obs {
        double time;
        int censor;
        bool in_a;
    };
    std::vector<Obs> all;
    for (const auto& o : group_a) all.push_back({o.time, o.censor, true});
    for (const auto& o : group_b) all.push_back({o.time, o.censor, false});
    std::sort(all.begin(), all.end(), [](const Obs& x, const Obs& y) { return x.time < y.time; });

    double n_a = static_cast<double>(group_a.size());
    double n_b = static_cast<double>(group_b.size());
    double observed_minus_expected = 0.0;
    double variance = 0.0;
    int total_events = 0;
    std::size_t i = 0;
    while (i < all.size()) {
        const double t = all[i].time;
        double d_a = 0, d = 0, leave_a = 0, leave_b = 0;
        while (i < all.size() && all[i].time == t) {
            if (all[i].censor == 0) {
                d += 1;
                if (all[i].in_a) d_a += 1;
            }
            (all[i].in_a ? leave_a : leave_b) += 1;
            ++i;
        }
        if (d > 0) {
            const double n = n_a + n_b;
            observed_minus_expected += d_a - d * n_a / n;
            if (n > 1) variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1);
            total_events += static_cast<int>(d);
        }
        n_a -= leave_a;
        n_b -= leave_b;
    }
    if (total_events == 0) throw UndefinedStatistic("logrank_test: no events");
    TestResult r;
    if (variance <= 0.0) {
        if (observed_minus_expected == 0.0) return r;
        throw UndefinedStatistic("logrank_test: zero variance");
    }
    r.statistic = observed_minus_expected * observed_minus_expected / variance;
    r.p_value = special::chi2_sf(r.statistic, 1.0);
    return r;
}

// Welch's unequal-variance t-test, two-sided.
inline TestResult welch_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw UndefinedStatistic("welch_ttest: each sample needs at least 2 values");
    auto moments = [](std::span<const double> x) {
        const double n = static_cast<double>(x.size());
        const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : x) ss += (v - m) * (v - m);
        return std::pair{m, ss / (n - 1.0)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    const double sa = va / static_cast<double>(a.size());
    const double sb = vb / static_cast<double>(b.size());
    if (sa + sb <= 0.0) throw UndefinedStatistic("welch_ttest: both samples have zero variance");
    TestResult r;
    r.statistic = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) /
           (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
    r.p_value = special::student_t_two_sided(r.statistic, r.df);
    return r;
}

// ---------------------------------------------------------------------------
// Risk groups

struct RiskSplit {
    std::vector<std::size_t> high;
    std::vector<std::size_t> low;
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw UndefinedStatistic("median of empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Strictly above the median risk is high risk; ties at the median are low.
inline RiskSplit median_split(std::span<const double> risks) {
    if (risks.size() < 2) throw UndefinedStatistic("median_split: need at least 2 patients");
    const double m = median(std::vector<double>(risks.begin(), risks.end()));
    RiskSplit s;
    for (std::size_t i = 0; i < risks.size(); ++i) (risks[i] > m ? s.high : s.low).push_back(i);
    return s;
}

// Observed survival time strictly below the median is high risk.
inline RiskSplit median_time_split(std::span<const double> times) {
    if (times.size() < 2) throw UndefinedStatistic("median_time_split: need at least 2 patients");
    const double m = median(std::vector<double>(times.begin(), times.end()));
    RiskSplit s;
    for (std::size_t i = 0; i < times.size(); ++i) (times[i] < m ? s.high : s.low).push_back(i);
    return s;
}

}  // namespace ccl
