#pragma once

// Evaluation of held-out predictions and the files a run leaves behind:
// report.json, cindex.csv, km.csv, km.svg and predictions.csv.

#include <ccl/config.hpp>
#include <ccl/stats.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ccl {

struct Prediction {
    std::string id;
    int fold = 0;
    double time = 0.0;
    int censor = 0;
    double risk = 0.0;
    bool high_risk = false;  // filled by evaluate_predictions
};

struct FoldScore {
    int fold = 0;
    double cindex = std::numeric_limits<double>::quiet_NaN();
};

struct Evaluation {
    std::vector<FoldScore> folds;
    double mean_cindex = std::numeric_limits<double>::quiet_NaN();
    double std_cindex = std::numeric_limits<double>::quiet_NaN();
    std::optional<TestResult> logrank;  // empty when undefined (no events, or an empty group)
    std::optional<TestResult> ttest;
    KMCurve km_high;
    KMCurve km_low;
    std::size_t high_count = 0;
    std::size_t low_count = 0;
};

// Population standard deviation, matching "spread across the folds that were run".
inline double population_std(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

// Per fold: C-index and a median split (each fold has its own model, so risk
// scales are only comparable within a fold). The high/low groups are then
// pooled for Kaplan-Meier, the log-rank test and a Welch test on the observed
// times of uncensored patients.
inline Evaluation evaluate_predictions(std::vector<Prediction>& preds, const std::string& split_rule = "risk") {
    if (split_rule != "risk" && split_rule != "time") throw ConfigError("unknown split rule '" + split_rule + "'");
    Evaluation ev;
    std::map<int, std::vector<std::size_t>> by_fold;
    for (std::size_t i = 0; i < preds.size(); ++i) by_fold[preds[i].fold].push_back(i);

    std::vector<double> scores;
    for (const auto& [fold, idx] : by_fold) {
        std::vector<SurvivalOutcome> outcomes;
        std::vector<double> key;
        for (std::size_t i : idx) {
            outcomes.push_back({preds[i].time, preds[i].censor, preds[i].risk});
            key.push_back(split_rule == "risk" ? preds[i].risk : preds[i].time);
        }
        FoldScore fs{fold, concordance_index(outcomes)};
        ev.folds.push_back(fs);
        scores.push_back(fs.cindex);
        if (idx.size() >= 2) {
            const RiskSplit split = split_rule == "risk" ? median_split(key) : median_time_split(key);
            for (std::size_t j : split.high) preds[idx[j]].high_risk = true;
            for (std::size_t j : split.low) preds[idx[j]].high_risk = false;
        }
    }
    if (!scores.empty()) {
        double sum = 0.0;
        for (double s : scores) sum += s;
        ev.mean_cindex = sum / static_cast<double>(scores.size());
        ev.std_cindex = population_std(scores);
    }

    std::vector<SurvivalOutcome> high, low;
    std::vector<double> high_times, low_times;
    for (const auto& p : preds) {
        (p.high_risk ? high : low).push_back({p.time, p.censor, p.risk});
        if (p.censor == 0) (p.high_risk ? high_times : low_times).push_back(p.time);
    }
    ev.high_count = high.size();
    ev.low_count = low.size();
    if (!high.empty()) ev.km_high = km_curve(high);
    if (!low.empty()) ev.km_low = km_curve(low);
    if (!high.empty() && !low.empty()) {
        try {
            ev.logrank = logrank_test(high, low);
        } catch (const UndefinedStatistic&) {
        }
    }
    try {
        ev.ttest = welch_ttest(high_times, low_times);
    } catch (const UndefinedStatistic&) {
    }
    return ev;
}

struct CVReport {
    RunConfig config;
    std::vector<Prediction> predictions;
    Evaluation evaluation;
    double wall_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::string svg_number(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << v;
    return os.str();
}

inline std::string format_p(double p) {
    std::ostringstream os;
    os.precision(3);
    os << p;
    return os.str();
}

}  // namespace detail

inline nlohmann::json report_json(const CVReport& r) {
    nlohmann::json j;
    j["config"] = r.config;
    j["folds"] = nlohmann::json::array();
    for (const auto& f : r.evaluation.folds) j["folds"].push_back({{"fold", f.fold}, {"cindex", detail::number_or_null(f.cindex)}});
    j["mean_cindex"] = detail::number_or_null(r.evaluation.mean_cindex);
    j["std_cindex"] = detail::number_or_null(r.evaluation.std_cindex);
    if (r.evaluation.logrank) {
        j["logrank"] = {{"chi2", detail::number_or_null(r.evaluation.logrank->statistic)},
                        {"p", detail::number_or_null(r.evaluation.logrank->p_value)}};
    } else {
        j["logrank"] = nullptr;
    }
    if (r.evaluation.ttest) {
        j["ttest"] = {{"t", detail::number_or_null(r.evaluation.ttest->statistic)},
                      {"p", detail::number_or_null(r.evaluation.ttest->p_value)}};
    } else {
        j["ttest"] = nullptr;
    }
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

inline std::string cindex_csv(const Evaluation& ev) {
    std::string s = "fold,cindex\n";
    for (const auto& f : ev.folds) s += std::to_string(f.fold) + "," + detail::format_double(f.cindex) + "\n";
    return s;
}

// One row per distinct event time over both groups.
inline std::string km_csv(const Evaluation& ev) {
    std::vector<double> times = ev.km_high.times;
    times.insert(times.end(), ev.km_low.times.begin(), ev.km_low.times.end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    std::string s = "time,S_high,S_low\n";
    for (double t : times) {
        s += detail::format_double(t) + "," + detail::format_double(ev.km_high.at(t)) + "," +
             detail::format_double(ev.km_low.at(t)) + "\n";
    }
    return s;
}

inline std::string predictions_csv(const std::vector<Prediction>& preds) {
    std::string s = "patient_id,fold,time_days,censor,risk,risk_group\n";
    for (const auto& p : preds) {
        s += p.id + "," + std::to_string(p.fold) + "," + detail::format_double(p.time) + "," + std::to_string(p.censor) +
             "," + detail::format_double(p.risk) + "," + (p.high_risk ? "high" : "low") + "\n";
    }
    return s;
}

// Two step curves on a shared time axis with the log-rank p in the corner.
inline std::string km_svg(const Evaluation& ev) {
    const double width = 640, height = 400, left = 60, right = 20, top = 30, bottom = 50;
    const double pw = width - left - right, ph = height - top - bottom;
    double tmax = 0.0;
    for (double t : ev.km_high.times) tmax = std::max(tmax, t);
    for (double t : ev.km_low.times) tmax = std::max(tmax, t);
    if (tmax <= 0.0) tmax = 1.0;
    auto x = [&](double t) { return detail::svg_number(left + pw * t / tmax); };
    auto y = [&](double s) { return detail::svg_number(top + ph * (1.0 - s)); };
    auto steps = [&](const KMCurve& c) {
        std::string pts = x(0.0) + "," + y(1.0);
        double s = 1.0;
        for (std::size_t i = 0; i < c.times.size(); ++i) {
            pts += " " + x(c.times[i]) + "," + y(s);
            s = c.survival[i];
            pts += " " + x(c.times[i]) + "," + y(s);
        }
        pts += " " + x(tmax) + "," + y(s);
        return pts;
    };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double s = i / 4.0;
        os << "<text x=\"" << left - 8 << "\" y=\"" << y(s) << "\" text-anchor=\"end\" dominant-baseline=\"middle\">"
           << detail::svg_number(s) << "</text>\n";
        const double t = tmax * i / 4.0;
        os << "<text x=\"" << x(t) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
           << detail::svg_number(t) << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">time (days)</text>\n";
    os << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << top + ph / 2 << ")\">survival probability</text>\n";
    os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"" << steps(ev.km_high) << "\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#2471a3\" stroke-width=\"2\" points=\"" << steps(ev.km_low) << "\"/>\n";
    os << "<text x=\"" << left + pw - 4 << "\" y=\"" << top + 14 << "\" text-anchor=\"end\" fill=\"#c0392b\">high risk (n="
       << ev.high_count << ")</text>\n";
    os << "<text x=\"" << left + pw - 4 << "\" y=\"" << top + 30 << "\" text-anchor=\"end\" fill=\"#2471a3\">low risk (n="
       << ev.low_count << ")</text>\n";
    os << "<text x=\"" << left + pw - 4 << "\" y=\"" << top + 46 << "\" text-anchor=\"end\">log-rank p = "
       << (ev.logrank ? detail::format_p(ev.logrank->p_value) : std::string("n/a")) << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

inline void emit_report(const CVReport& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    detail::write_text(dir / "report.json", report_json(r).dump(2) + "\n");
    detail::write_text(dir / "cindex.csv", cindex_csv(r.evaluation));
    detail::write_text(dir / "km.csv", km_csv(r.evaluation));
    detail::write_text(dir / "km.svg", km_svg(r.evaluation));
    detail::write_text(dir / "predictions.csv", predictions_csv(r.predictions));
}

// ---------------------------------------------------------------------------
// Reading back

// patient_id,fold,time_days,censor,risk[,risk_group]; the group column is
// recomputed, not trusted.
inline std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty()) throw CohortError(path.string() + ": empty predictions file");
    const auto header = detail::split_csv(lines.front());
    if (header.size() < 5 || detail::trim(header[0]) != "patient_id" || detail::trim(header[1]) != "fold" ||
        detail::trim(header[2]) != "time_days" || detail::trim(header[3]) != "censor" || detail::trim(header[4]) != "risk") {
        throw CohortError(path.string() + ": expected header patient_id,fold,time_days,censor,risk");
    }
    std::vector<Prediction> preds;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (detail::trim(lines[ln]).empty()) continue;
        const auto f = detail::split_csv(lines[ln]);
        const std::string where = path.string() + " line " + std::to_string(ln + 1);
        if (f.size() < 5) throw CohortError(where + ": expected at least 5 fields");
        Prediction p;
        p.id = std::string(detail::trim(f[0]));
        double fold = 0, censor = 0;
        if (!detail::parse_double(detail::trim(f[1]), fold) || fold != std::floor(fold)) {
            throw CohortError(where + ": bad fold");
        }
        if (!detail::parse_double(detail::trim(f[2]), p.time) || !(p.time > 0.0)) {
            throw CohortError(where + ": time must be a positive number");
        }
        if (!detail::parse_double(detail::trim(f[3]), censor) || (censor != 0.0 && censor != 1.0)) {
            throw CohortError(where + ": censor must be 0 or 1");
        }
        if (!detail::parse_double(detail::trim(f[4]), p.risk) || !std::isfinite(p.risk)) {
            throw CohortError(where + ": risk must be a finite number");
        }
        p.fold = static_cast<int>(fold);
        p.censor = static_cast<int>(censor);
        preds.push_back(std::move(p));
    }
    return preds;
}

// Rebuilds a report from a run directory (report.json + predictions.csv).
inline CVReport load_report(const std::filesystem::path& dir) {
    std::ifstream in(dir / "report.json");
    if (!in) throw IoError("cannot read " + (dir / "report.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError((dir / "report.json").string() + ": " + e.what());
    }
    CVReport r;
    if (!j.contains("config")) throw IoError((dir / "report.json").string() + ": missing config");
    r.config = j.at("config").get<RunConfig>();
    if (j.contains("wall_seconds") && j.at("wall_seconds").is_number()) r.wall_seconds = j.at("wall_seconds").get<double>();
    r.predictions = load_predictions(dir / "predictions.csv");
    r.evaluation = evaluate_predictions(r.predictions, r.config.km_split);
    return r;
}

}  // namespace ccl
