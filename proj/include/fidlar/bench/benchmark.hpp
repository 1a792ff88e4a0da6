#pragma once

#include "../baselines/ga.hpp"
#include "../baselines/rule_plan.hpp"
#include "../hydro/dataset.hpp"
#include "../models/manager.hpp"
#include "closed_loop.hpp"
#include "metrics.hpp"

#include <algorithm>
#include <chrono>

namespace fidlar::bench {

using json = nlohmann::json;

/// Builds a simulator controller for a run whose row 0 is row `start` of `episode`.
using ControllerFactory =
    std::function<hydro::Controller(const hydro::SimRun& episode, std::size_t start, std::shared_ptr<PlannerStats> stats)>;

struct ControllerSpec {
    std::string name;
    ControllerFactory make;
};

inline ControllerSpec rule_spec(const baselines::RulePolicy& policy, std::string name = "rule") {
    return {std::move(name), [policy](const hydro::SimRun&, std::size_t, std::shared_ptr<PlannerStats>) {
                return hydro::rule_controller(policy, {});
            }};
}

/// A planner replanning every `replan_every` hours; 0 means once per horizon.
inline ControllerSpec planner_spec(std::string name, const models::ModelLayout& L, Planner planner,
                                   std::size_t replan_every = 1) {
    return {std::move(name), [L, planner = std::move(planner), replan_every](const hydro::SimRun& ep, std::size_t start,
                                                                             std::shared_ptr<PlannerStats> stats) {
                return planner_controller(L, ep, start, planner, replan_every == 0 ? L.k() : replan_every, stats);
            }};
}

inline Planner manager_planner(const models::ManagerModel& m) {
    return [m](const Mat& past, const Mat& cov) { return m.suggest_schedule(past, cov); };
}

/// GA search per window, seeded with the evaluator-side rule plan and the all-closed schedule.
inline Planner ga_planner(const models::EvaluatorModel& ev, const hydro::NetworkTopology& topo,
                          const baselines::RulePolicy& policy, const Thresholds& th, const models::LossWeights& w,
                          const baselines::GAConfig& cfg) {
    return [ev, topo, policy, th, w, cfg](const Mat& past, const Mat& cov) {
        const auto& L = ev.layout();
        ts::WindowSample s;
        s.past = past;
        s.future_cov = cov;
        s.future_controls = Mat::Zero(static_cast<Eigen::Index>(L.k()), static_cast<Eigen::Index>(L.S()));
        const auto rule = baselines::rule_plans(ev, topo, policy, std::vector<const ts::WindowSample*>{&s});
        return baselines::ga_optimize(ev, past, cov, th, w, cfg, {rule[0], s.future_controls}).best;
    };
}

struct ControllerResult {
    std::string name;
    std::vector<FloodMetrics> per_point; ///< summed over all runs
    FloodMetrics total;
    std::size_t plans = 0;
    double plan_seconds = 0.0;
    double wall_seconds = 0.0;
    std::vector<Mat> levels; ///< realized levels per run, [hours x N]

    double seconds_per_plan() const { return plans ? plan_seconds / static_cast<double>(plans) : 0.0; }
};

struct BenchmarkSettings {
    bool open_loop = false;
    std::size_t start = 71;    ///< closed loop: first row under control
    std::size_t hours = 0;     ///< closed loop: hours per episode; 0 = to the episode end
    std::size_t stride = 6;    ///< open loop: hours between window ends
    std::size_t horizon = 24;  ///< simulator forecast horizon
};

/// Realized level columns of a continued run, rows 1..hours.
inline Mat realized_levels(const hydro::SimRun& run, const models::ModelLayout& L, std::size_t hours) {
    Mat out(static_cast<Eigen::Index>(hours), static_cast<Eigen::Index>(L.N()));
    for (std::size_t n = 0; n < L.N(); ++n)
        out.col(static_cast<Eigen::Index>(n)) =
            run.frame.values().block(1, static_cast<Eigen::Index>(L.level_cols[n]), static_cast<Eigen::Index>(hours), 1);
    return out;
}

/// Run starts scored for one episode: one closed-loop start, or every open-loop window end.
inline std::vector<std::pair<std::size_t, std::size_t>> run_plan(const hydro::SimRun& ep, const models::ModelLayout& L,
                                                                 const BenchmarkSettings& s) {
    const std::size_t rows = static_cast<std::size_t>(ep.frame.rows());
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (!s.open_loop) {
        if (s.start + 1 < L.w() || s.start + 1 >= rows) throw ConfigurationError("benchmark start row outside the episode");
        const std::size_t avail = rows - 1 - s.start;
        out.emplace_back(s.start, s.hours == 0 ? avail : std::min(s.hours, avail));
        return out;
    }
    if (s.stride == 0) throw ConfigurationError("open-loop stride must be positive");
    for (std::size_t t = L.w() - 1; t + L.k() < rows; t += s.stride) out.emplace_back(t, L.k());
    return out;
}

/**
 * Plays every controller on every test episode through the simulator and
 * scores the realized levels. Closed loop runs each episode once from
 * `start`; open loop restarts the simulator at every window end and runs
 * one horizon, so planners act once per window.
 */
inline std::vector<ControllerResult> run_controllers(const std::vector<ControllerSpec>& specs,
                                                     const std::vector<hydro::SimRun>& episodes,
                                                     const hydro::DatasetConfig& dcfg, const models::ModelLayout& L,
                                                     const Thresholds& th, const BenchmarkSettings& s) {
    th.validate(L.N());
    std::vector<ControllerResult> out;
    for (const auto& spec : specs) {
        ControllerResult r;
        r.name = spec.name;
        r.per_point.assign(L.N(), {});
        auto stats = std::make_shared<PlannerStats>();
        const auto t0 = std::chrono::steady_clock::now();
        for (const auto& ep : episodes)
            for (const auto& [start, hours] : run_plan(ep, L, s)) {
                const auto run = continue_episode(dcfg.topology, dcfg.forcing.rain, ep, start, hours,
                                                  spec.make(ep, start, stats), s.horizon);
                Mat lv = realized_levels(run, L, hours);
                const auto m = flood_metrics(lv, th);
                for (std::size_t n = 0; n < L.N(); ++n) {
                    r.per_point[n] += m[n];
                    r.total += m[n];
                }
                r.levels.push_back(std::move(lv));
            }
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.plans = stats->plans;
        r.plan_seconds = stats->seconds;
        out.push_back(std::move(r));
    }
    return out;
}

struct AccuracyRow {
    std::string name;
    AccuracyMetrics test;
    double train_seconds = 0.0;
    double test_seconds = 0.0;
};

struct TimingRow {
    std::string name;
    double median_seconds = 0.0; ///< per window
    std::size_t runs = 0;
};

struct BenchmarkReport {
    std::string mode;
    std::uint64_t seed = 0;
    std::string fingerprint;
    std::vector<std::string> points;
    Thresholds thresholds;
    std::vector<ControllerResult> controllers;
    std::vector<AccuracyRow> accuracy;
    std::vector<TimingRow> timing;

    const ControllerResult& controller(const std::string& name) const {
        for (const auto& c : controllers)
            if (c.name == name) return c;
        throw ConfigurationError("no controller named " + name + " in the report");
    }

    json to_json() const {
        json ctl = json::array();
        for (const auto& c : controllers) {
            json pp = json::object();
            for (std::size_t n = 0; n < points.size(); ++n) pp[points[n]] = flood_metrics_to_json(c.per_point[n]);
            ctl.push_back({{"name", c.name}, {"total", flood_metrics_to_json(c.total)}, {"per_point", pp},
                           {"plans", c.plans}, {"plan_seconds", c.plan_seconds}, {"wall_seconds", c.wall_seconds}});
        }
        json acc = json::array();
        for (const auto& a : accuracy)
            acc.push_back({{"name", a.name}, {"mae_ft", a.test.mae}, {"rmse_ft", a.test.rmse},
                           {"train_seconds", a.train_seconds}, {"test_seconds", a.test_seconds}});
        json tim = json::array();
        for (const auto& t : timing) tim.push_back({{"name", t.name}, {"median_seconds_per_window", t.median_seconds}, {"runs", t.runs}});
        return {{"mode", mode}, {"seed", seed}, {"fingerprint", fingerprint}, {"points", points},
                {"flood_threshold_ft", thresholds.flood}, {"waste_threshold_ft", thresholds.waste},
                {"controllers", ctl}, {"accuracy", acc}, {"timing", tim}};
    }
};

/// Stable hex digest of a config, for matching reports to the runs that made them.
inline std::string fingerprint(const json& config) {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <class F>
double median_seconds(F&& fn, std::size_t runs) {
    if (runs == 0) throw ConfigurationError("timing needs at least one run");
    std::vector<double> t;
    for (std::size_t i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2), t.end());
    return t[t.size() / 2];
}

/// Median over `runs` of the mean per-window planning time on `samples`.
inline TimingRow time_planner(const std::string& name, const Planner& planner,
                              const std::vector<const ts::WindowSample*>& samples, std::size_t runs = 5) {
    if (samples.empty()) throw ConfigurationError("timing needs at least one window");
    const double total = median_seconds(
        [&] {
            for (const auto* s : samples) (void)planner(s->past, s->future_cov);
        },
        runs);
    return {name, total / static_cast<double>(samples.size()), runs};
}

} // namespace fidlar::bench
