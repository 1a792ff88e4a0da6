#pragma once

#include "../svg.hpp"
#include "benchmark.hpp"

#include <filesystem>
#include <fstream>

namespace fidlar::bench {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigurationError("cannot write " + path.string());
    out << text;
}

inline std::string flood_csv(const BenchmarkReport& r) {
    std::ostringstream o;
    o << "controller,point,over_time_h,over_area_ft_h,under_time_h,under_area_ft_h\n";
    const auto row = [&](const std::string& c, const std::string& p, const FloodMetrics& m) {
        o << c << ',' << p << ',' << m.over_time << ',' << ts::format_double(m.over_area) << ',' << m.under_time << ','
          << ts::format_double(m.under_area) << '\n';
    };
    for (const auto& c : r.controllers) {
        for (std::size_t n = 0; n < r.points.size(); ++n) row(c.name, r.points[n], c.per_point[n]);
        row(c.name, "all", c.total);
    }
    return o.str();
}

inline std::string accuracy_csv(const BenchmarkReport& r) {
    std::ostringstream o;
    o << "model,mae_ft,rmse_ft,train_seconds,test_seconds\n";
    for (const auto& a : r.accuracy)
        o << a.name << ',' << ts::format_double(a.test.mae) << ',' << ts::format_double(a.test.rmse) << ','
          << ts::format_double(a.train_seconds) << ',' << ts::format_double(a.test_seconds) << '\n';
    return o.str();
}

inline std::string timing_csv(const BenchmarkReport& r) {
    std::ostringstream o;
    o << "controller,median_seconds_per_window,runs,plans,plan_seconds\n";
    for (const auto& t : r.timing) {
        std::size_t plans = 0;
        double secs = 0.0;
        for (const auto& c : r.controllers)
            if (c.name == t.name) plans = c.plans, secs = c.plan_seconds;
        o << t.name << ',' << ts::format_double(t.median_seconds) << ',' << t.runs << ',' << plans << ','
          << ts::format_double(secs) << '\n';
    }
    return o.str();
}

/**
 * One plot per closed-loop run, zoomed to `span` hours around the worst
 * exceedance of the first controller, at the point where it occurs.
 */
inline std::vector<std::pair<std::string, std::string>> event_plots(const BenchmarkReport& r, std::size_t span = 96) {
    std::vector<std::pair<std::string, std::string>> out;
    if (r.controllers.empty() || r.mode != "closed") return out;
    const auto& ref = r.controllers.front();
    for (std::size_t run = 0; run < ref.levels.size(); ++run) {
        const Mat& lv = ref.levels[run];
        Eigen::Index pr = 0, pc = 0;
        (lv.rowwise() - Eigen::Map<const Eigen::RowVectorXd>(r.thresholds.flood.data(), lv.cols())).maxCoeff(&pr, &pc);
        const std::size_t T = static_cast<std::size_t>(lv.rows());
        const std::size_t len = std::min(span, T);
        const std::size_t from = std::min(T - len, static_cast<std::size_t>(std::max<Eigen::Index>(0, pr - static_cast<Eigen::Index>(len / 2))));
        std::vector<svg::Series> series;
        for (const auto& c : r.controllers) {
            svg::Series s{c.name, {}};
            for (std::size_t i = from; i < from + len; ++i) s.y.push_back(c.levels[run](static_cast<Eigen::Index>(i), pc));
            series.push_back(std::move(s));
        }
        const auto p = static_cast<std::size_t>(pc);
        const std::string title = "run " + std::to_string(run) + ", " + r.points[p] + ", hours " + std::to_string(from + 1) +
                                  "-" + std::to_string(from + len);
        out.emplace_back("event_run" + std::to_string(run) + "_" + r.points[p] + ".svg",
                         svg::line_chart(title, series, {{"flood", r.thresholds.flood[p]}, {"waste", r.thresholds.waste[p]}},
                                         "hour under control", "level (ft)", static_cast<double>(from + 1)));
    }
    return out;
}

/// Writes flood_metrics.csv, accuracy.csv, timing.csv, report.json and event plots into `dir`.
inline void write_report(const std::filesystem::path& dir, const BenchmarkReport& r) {
    std::filesystem::create_directories(dir);
    write_text(dir / "flood_metrics.csv", flood_csv(r));
    write_text(dir / "accuracy.csv", accuracy_csv(r));
    write_text(dir / "timing.csv", timing_csv(r));
    write_text(dir / "report.json", r.to_json().dump(2) + "\n");
    for (const auto& [name, text] : event_plots(r)) write_text(dir / name, text);
}

} // namespace fidlar::bench
