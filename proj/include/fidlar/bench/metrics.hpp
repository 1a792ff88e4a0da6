#pragma once

#include "../thresholds.hpp"
#include "../timeseries.hpp"

#include <json.hpp>

#include <cmath>
#include <span>
#include <vector>

namespace fidlar::bench {

/// Exceedance counts (hours) and areas (ft-hours) above flood / below waste.
struct FloodMetrics {
    long over_time = 0;
    double over_area = 0.0;
    long under_time = 0;
    double under_area = 0.0;

    FloodMetrics& operator+=(const FloodMetrics& o) {
        over_time += o.over_time;
        over_area += o.over_area;
        under_time += o.under_time;
        under_area += o.under_area;
        return *this;
    }
    friend FloodMetrics operator+(FloodMetrics a, const FloodMetrics& b) { return a += b; }
    friend bool operator==(const FloodMetrics&, const FloodMetrics&) = default;
};

inline nlohmann::json flood_metrics_to_json(const FloodMetrics& m) {
    return {{"over_time_h", m.over_time}, {"over_area_ft_h", m.over_area}, {"under_time_h", m.under_time},
            {"under_area_ft_h", m.under_area}};
}

inline FloodMetrics flood_metrics(std::span<const double> levels, double flood, double waste) {
    FloodMetrics m;
    for (double l : levels) {
        if (!std::isfinite(l)) throw ContractViolation("flood_metrics: non-finite level");
        if (l > flood) {
            ++m.over_time;
            m.over_area += l - flood;
        }
        if (l < waste) {
            ++m.under_time;
            m.under_area += waste - l;
        }
    }
    return m;
}

/// One entry per column of a [T x N] level matrix.
inline std::vector<FloodMetrics> flood_metrics(const Mat& levels, const Thresholds& th) {
    th.validate(static_cast<std::size_t>(levels.cols()));
    std::vector<FloodMetrics> out;
    std::vector<double> col(static_cast<std::size_t>(levels.rows()));
    for (Eigen::Index c = 0; c < levels.cols(); ++c) {
        for (Eigen::Index r = 0; r < levels.rows(); ++r) col[static_cast<std::size_t>(r)] = levels(r, c);
        out.push_back(flood_metrics(col, th.flood[static_cast<std::size_t>(c)], th.waste[static_cast<std::size_t>(c)]));
    }
    return out;
}

struct AccuracyMetrics {
    double mae = 0.0;
    double rmse = 0.0;
};

inline AccuracyMetrics accuracy_metrics(const std::vector<Mat>& pred, const std::vector<Mat>& truth) {
    if (pred.size() != truth.size()) throw StructuralError("accuracy_metrics: prediction/truth count mismatch");
    double abs_sum = 0.0, sq_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].rows() != truth[i].rows() || pred[i].cols() != truth[i].cols())
            throw StructuralError("accuracy_metrics: prediction/truth shape mismatch");
        const auto d = (pred[i] - truth[i]).array();
        abs_sum += d.abs().sum();
        sq_sum += d.square().sum();
        n += static_cast<std::size_t>(d.size());
    }
    if (n == 0) return {};
    return {abs_sum / static_cast<double>(n), std::sqrt(sq_sum / static_cast<double>(n))};
}

inline AccuracyMetrics accuracy_metrics(const Mat& pred, const Mat& truth) {
    return accuracy_metrics(std::vector<Mat>{pred}, std::vector<Mat>{truth});
}

} // namespace fidlar::bench
