#pragma once

#include "../hydro/sim.hpp"
#include "../models/layout.hpp"

#include <chrono>
#include <functional>
#include <memory>

namespace fidlar::bench {

/// Plans a k-hour schedule [k x S] from the model's view of one window.
using Planner = std::function<Mat(const Mat& past, const Mat& future_cov)>;

/// Future covariate block [k x C] from forecast spans; a short forecast repeats its last hour.
inline Mat future_covariates(const models::ModelLayout& L, std::span<const double> tide, std::span<const double> rain) {
    if (tide.empty() || rain.empty()) throw SizingError("empty covariate forecast");
    Mat out(static_cast<Eigen::Index>(L.k()), static_cast<Eigen::Index>(L.C()));
    for (std::size_t c = 0; c < L.C(); ++c) {
        const auto role = L.specs[L.cov_cols[c]].role;
        const auto src = role == ts::Role::tide ? tide : rain;
        for (std::size_t j = 0; j < L.k(); ++j)
            out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = src[std::min(j, src.size() - 1)];
    }
    return out;
}

/// Copy of a forcing starting at `from`.
inline hydro::Forcing forcing_from(const hydro::Forcing& f, std::size_t from) {
    if (from >= f.hours()) throw SizingError("forcing offset past its end");
    return {std::vector<double>(f.tide.begin() + static_cast<std::ptrdiff_t>(from), f.tide.end()),
            std::vector<double>(f.rain.begin() + static_cast<std::ptrdiff_t>(from), f.rain.end())};
}

struct PlannerStats {
    std::size_t plans = 0;
    double seconds = 0.0;
};

/**
 * Wraps a planner as a simulator controller for a run whose row 0 is row
 * `start` of `episode`. The controller rebuilds the frame rows the planner
 * needs from what it observes, seeded with the episode rows before `start`.
 * It replans every `replan_every` hours and plays the plan in between.
 */
inline hydro::Controller planner_controller(const models::ModelLayout& L, const hydro::SimRun& episode,
                                            std::size_t start, Planner planner, std::size_t replan_every = 1,
                                            std::shared_ptr<PlannerStats> stats = nullptr) {
    if (replan_every == 0 || replan_every > L.k()) throw ConfigurationError("replan interval must lie in [1, k]");
    if (start + 1 < L.w()) throw SizingError("start row leaves fewer than w rows of history");
    if (static_cast<std::size_t>(episode.frame.cols()) != L.V())
        throw StructuralError("episode frame has " + std::to_string(episode.frame.cols()) + " columns, layout has " +
                              std::to_string(L.V()));
    struct State {
        Mat history; ///< rolling window, oldest first
        Mat plan;
        std::size_t plan_hour = 0;
        hydro::Forcing forcing;
    };
    auto st = std::make_shared<State>();
    st->history = episode.frame.values().middleRows(static_cast<Eigen::Index>(start + 1 - L.w()),
                                                     static_cast<Eigen::Index>(L.w()));
    st->forcing = forcing_from(episode.forcing, start);
    if (!stats) stats = std::make_shared<PlannerStats>();
    return [L, st, planner = std::move(planner), replan_every, stats](const hydro::ControlContext& ctx) {
        const auto& topo = *ctx.topology;
        if (ctx.hour > 1) {
            // row for the state after hour-1; hour 1 reuses the seeded row `start`
            const auto w = static_cast<Eigen::Index>(L.w());
            st->history.topRows(w - 1) = st->history.bottomRows(w - 1).eval();
            auto row = st->history.row(w - 1);
            const std::size_t n = topo.control_points.size();
            for (std::size_t i = 0; i < n; ++i)
                row(static_cast<Eigen::Index>(i)) = ctx.state->levels[static_cast<std::size_t>(topo.control_points[i])];
            row(static_cast<Eigen::Index>(n)) = st->forcing.tide[ctx.hour - 1];
            row(static_cast<Eigen::Index>(n + 1)) = st->forcing.rain[ctx.hour - 1];
            for (std::size_t s = 0; s < ctx.previous_controls.size(); ++s)
                row(static_cast<Eigen::Index>(n + 2 + s)) = ctx.previous_controls[s];
        }
        if (st->plan.size() == 0 || ctx.hour - st->plan_hour >= replan_every) {
            const Mat cov = future_covariates(L, ctx.forecast_tide, ctx.forecast_rain);
            const auto t0 = std::chrono::steady_clock::now();
            st->plan = planner(st->history, cov);
            stats->seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            ++stats->plans;
            st->plan_hour = ctx.hour;
        }
        const auto r = st->plan.row(static_cast<Eigen::Index>(ctx.hour - st->plan_hour));
        return std::vector<double>(r.data(), r.data() + r.size());
    };
}

/// Continues `episode` from row `start` for `hours` steps under `controller`.
/// The returned frame has hours + 1 rows; row 0 is the episode's row `start`.
inline hydro::SimRun continue_episode(const hydro::NetworkTopology& topo, const hydro::RainConfig& runoff,
                                      const hydro::SimRun& episode, std::size_t start, std::size_t hours,
                                      const hydro::Controller& controller, std::size_t horizon = 24) {
    if (start >= episode.states.size()) throw SizingError("start row beyond the recorded episode");
    const auto local = forcing_from(episode.forcing, start);
    if (local.hours() < hours + 1) throw SizingError("episode forcing too short for the requested continuation");
    const auto& F = episode.frame;
    std::vector<double> ctrl;
    for (auto c : F.control_columns()) ctrl.push_back(F.values()(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(c)));
    auto run = hydro::simulate_forcing(topo, local, runoff, controller, hours + 1, horizon, episode.states[start], ctrl);
    run.seed = episode.seed;
    return run;
}

} // namespace fidlar::bench
