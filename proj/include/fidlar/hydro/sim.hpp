#pragma once

#include "../error.hpp"
#include "../timeseries.hpp"
#include "forcing.hpp"
#include "topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fidlar::hydro {

inline constexpr double step_seconds = 3600.0;
inline constexpr double inches_per_foot = 12.0;

struct SimState {
    std::vector<double> levels;       ///< ft, one per cell; the boundary cell holds the tide
    std::vector<double> runoff_store; ///< ft of water over each cell's catchment
};

inline SimState initial_state(const NetworkTopology& topo, double tide) {
    SimState s;
    for (const auto& c : topo.cells) s.levels.push_back(c.initial_level);
    s.levels[static_cast<std::size_t>(topo.boundary)] = tide;
    s.runoff_store.assign(topo.cells.size(), 0.0);
    return s;
}

/// Volume-balance terms of one step, ft^3 (positive into the network).
struct StepFluxes {
    double boundary = 0.0; ///< exchange with the tidal cell, including pumps/gates discharging to it
    double rainfall = 0.0; ///< direct rain on cells plus effective rain into runoff stores
    double clamp = 0.0;    ///< water added by the dry-bed floor
};

/// Water volume held by the interior cells and their runoff stores, ft^3.
inline double stored_volume(const NetworkTopology& topo, const SimState& s) {
    double v = 0.0;
    for (std::size_t c = 0; c < topo.cells.size(); ++c) {
        if (static_cast<int>(c) == topo.boundary) continue;
        v += s.levels[c] * topo.cells[c].area + s.runoff_store[c] * topo.cells[c].catchment_area;
    }
    return v;
}

/// One-way orifice flow through a gate, cfs.
inline double gate_flow(double opening, double h_up, double h_dn, double coeff) {
    return coeff * opening * std::sqrt(std::max(h_up - h_dn, 0.0));
}

/**
 * Advances the network by one hour.
 *
 * `controls` follows topology.structures, `rain` is in/hr per cell (the
 * boundary entry is ignored). Gate flow is capped at the volume that would
 * equalize the two cells; pump flow is capacity * setting unless the
 * upstream cell runs dry.
 */
inline SimState step(const SimState& state, const NetworkTopology& topo, std::span<const double> controls,
                     std::span<const double> rain, double tide, const RainConfig& runoff,
                     StepFluxes* fluxes = nullptr) {
    const auto n = topo.cells.size();
    const auto b = static_cast<std::size_t>(topo.boundary);
    if (controls.size() != topo.structures.size())
        throw StructuralError("step: " + std::to_string(controls.size()) + " controls for " +
                              std::to_string(topo.structures.size()) + " structures");
    if (rain.size() != n)
        throw StructuralError("step: " + std::to_string(rain.size()) + " rain values for " + std::to_string(n) +
                              " cells");
    if (!std::isfinite(tide)) throw SimulationFault("non-finite tide at boundary cell " + topo.cells[b].id, topo.boundary);
    for (std::size_t c = 0; c < n; ++c)
        if (c != b && (!std::isfinite(rain[c]) || rain[c] < 0.0))
            throw SimulationFault("invalid rain forcing at cell " + topo.cells[c].id, static_cast<int>(c));
    for (std::size_t s = 0; s < controls.size(); ++s)
        if (!(controls[s] >= 0.0 && controls[s] <= 1.0))
            throw ContractViolation("control for " + topo.structures[s].id + " outside [0,1]");

    const double dt = step_seconds;
    std::vector<double> h = state.levels;
    h[b] = tide;
    std::vector<double> net(n, 0.0); // cfs into each cell
    StepFluxes fx;
    SimState next;
    next.runoff_store = state.runoff_store;

    for (std::size_t c = 0; c < n; ++c) {
        if (c == b) continue;
        const auto& cell = topo.cells[c];
        const double rain_ft = rain[c] / inches_per_foot;
        const double released = state.runoff_store[c] / runoff.runoff_lag;
        const double effective = runoff.runoff_coefficient * rain_ft;
        next.runoff_store[c] = state.runoff_store[c] - released + effective;
        net[c] += (released * cell.catchment_area + rain_ft * cell.area) / dt;
        fx.rainfall += (effective * cell.catchment_area + rain_ft * cell.area);
    }

    const auto transfer = [&](std::size_t from, std::size_t to, double q) {
        net[from] -= q;
        net[to] += q;
        if (from == b) fx.boundary += q * dt;
        if (to == b) fx.boundary -= q * dt;
    };

    for (const auto& r : topo.reaches) {
        const auto a = static_cast<std::size_t>(r.from), c = static_cast<std::size_t>(r.to);
        transfer(a, c, r.conveyance * (h[a] - h[c]));
    }

    std::vector<double> gate_out(n, 0.0);
    for (std::size_t s = 0; s < topo.structures.size(); ++s) {
        const auto& st = topo.structures[s];
        if (st.type != StructureType::gate) continue;
        const auto u = static_cast<std::size_t>(st.upstream), d = static_cast<std::size_t>(st.downstream);
        double q = gate_flow(controls[s], h[u], h[d], st.capacity);
        const double dh = std::max(h[u] - h[d], 0.0);
        const double a_up = topo.cells[u].area;
        const double equalize = d == b ? dh * a_up / dt
                                       : dh * a_up * topo.cells[d].area / ((a_up + topo.cells[d].area) * dt);
        q = std::min(q, equalize);
        gate_out[u] += q;
        transfer(u, d, q);
    }
    for (std::size_t s = 0; s < topo.structures.size(); ++s) {
        const auto& st = topo.structures[s];
        if (st.type != StructureType::pump) continue;
        const auto u = static_cast<std::size_t>(st.upstream), d = static_cast<std::size_t>(st.downstream);
        const double available = std::max(h[u] * topo.cells[u].area / dt - gate_out[u], 0.0);
        const double q = std::min(st.capacity * controls[s], available);
        gate_out[u] += q;
        transfer(u, d, q);
    }

    next.levels.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
        if (c == b) {
            next.levels[c] = tide;
            continue;
        }
        double lv = h[c] + dt * net[c] / topo.cells[c].area;
        if (!std::isfinite(lv)) throw SimulationFault("non-finite level at cell " + topo.cells[c].id, static_cast<int>(c));
        if (lv < 0.0) {
            fx.clamp += -lv * topo.cells[c].area;
            lv = 0.0;
        }
        next.levels[c] = lv;
    }
    if (fluxes) *fluxes = fx;
    return next;
}

// ---------------------------------------------------------------------------
// Closed-loop simulation

/// What a controller may look at when choosing the settings for step `hour`.
struct ControlContext {
    std::size_t hour = 0;
    const SimState* state = nullptr;             ///< state after step hour-1
    const NetworkTopology* topology = nullptr;
    std::span<const double> previous_controls;   ///< settings applied at hour-1
    std::span<const double> forecast_tide;       ///< hours [hour, hour + horizon)
    std::span<const double> forecast_rain;
};

using Controller = std::function<std::vector<double>(const ControlContext&)>;

inline Controller all_closed_controller() {
    return [](const ControlContext& ctx) { return std::vector<double>(ctx.topology->structures.size(), 0.0); };
}

/// Frame column layout for a topology: levels, tide, rain, then one column per structure.
inline std::vector<ts::VariableSpec> frame_specs(const NetworkTopology& topo) {
    std::vector<ts::VariableSpec> specs;
    for (int c : topo.control_points) {
        const auto& id = topo.cells[static_cast<std::size_t>(c)].id;
        specs.push_back({"WS_" + id, ts::Role::water_level, id, ts::Unit::ft});
    }
    const auto& bid = topo.cells[static_cast<std::size_t>(topo.boundary)].id;
    specs.push_back({"WS_" + bid, ts::Role::tide, bid, ts::Unit::ft});
    specs.push_back({"RAIN", ts::Role::rain, "basin", ts::Unit::in_per_hr});
    for (const auto& s : topo.structures)
        specs.push_back({s.id, s.type == StructureType::gate ? ts::Role::gate : ts::Role::pump,
                         topo.cells[static_cast<std::size_t>(s.upstream)].id, ts::Unit::fraction});
    return specs;
}

/// A simulated episode with the hidden state behind every frame row.
struct SimRun {
    ts::SeriesFrame frame;
    std::vector<SimState> states; ///< states[j] is the state recorded in row j
    Forcing forcing;              ///< covers the frame rows plus the forecast horizon
    std::uint64_t seed = 0;
};

/**
 * Runs `controller` against a given forcing for `hours` rows. Row 0 records
 * `start` with all structures closed; row j records the state after step j,
 * the tide and rain that drove it and the settings applied during it.
 */
inline SimRun simulate_forcing(const NetworkTopology& topo, const Forcing& forcing, const RainConfig& runoff,
                               const Controller& controller, std::size_t hours, std::size_t horizon,
                               const SimState& start, std::vector<double> start_controls = {}) {
    topo.validate();
    if (hours < 1) throw SizingError("simulation needs at least one hour");
    if (forcing.hours() < hours) throw SizingError("forcing shorter than the simulated period");
    const auto specs = frame_specs(topo);
    const auto n_levels = topo.control_points.size();
    const auto n_struct = topo.structures.size();
    if (start_controls.empty()) start_controls.assign(n_struct, 0.0);

    Mat values(static_cast<Eigen::Index>(hours), static_cast<Eigen::Index>(specs.size()));
    std::vector<SimState> states;
    states.reserve(hours);
    const auto record = [&](std::size_t row, const SimState& s, const std::vector<double>& ctrl) {
        const auto r = static_cast<Eigen::Index>(row);
        for (std::size_t i = 0; i < n_levels; ++i)
            values(r, static_cast<Eigen::Index>(i)) = s.levels[static_cast<std::size_t>(topo.control_points[i])];
        values(r, static_cast<Eigen::Index>(n_levels)) = forcing.tide[row];
        values(r, static_cast<Eigen::Index>(n_levels + 1)) = forcing.rain[row];
        for (std::size_t k = 0; k < n_struct; ++k) values(r, static_cast<Eigen::Index>(n_levels + 2 + k)) = ctrl[k];
        states.push_back(s);
    };

    SimState state = start;
    std::vector<double> ctrl = start_controls;
    record(0, state, ctrl);
    std::vector<double> rain_cells(topo.cells.size(), 0.0);
    for (std::size_t j = 1; j < hours; ++j) {
        const std::size_t f_end = std::min(forcing.hours(), j + horizon);
        ControlContext ctx{j,
                           &state,
                           &topo,
                           ctrl,
                           std::span<const double>(forcing.tide).subspan(j, f_end - j),
                           std::span<const double>(forcing.rain).subspan(j, f_end - j)};
        auto next_ctrl = controller(ctx);
        if (next_ctrl.size() != n_struct)
            throw StructuralError("controller returned " + std::to_string(next_ctrl.size()) + " settings for " +
                                  std::to_string(n_struct) + " structures");
        for (auto& v : next_ctrl) v = std::clamp(v, 0.0, 1.0);
        std::fill(rain_cells.begin(), rain_cells.end(), forcing.rain[j]);
        state = step(state, topo, next_ctrl, rain_cells, forcing.tide[j], runoff);
        ctrl = std::move(next_ctrl);
        record(j, state, ctrl);
    }
    return SimRun{ts::SeriesFrame(specs, ts::default_start(), std::move(values)), std::move(states), forcing, 0};
}

/// Deterministic given `seed`: generates forcing for hours + horizon and runs the controller from rest.
inline SimRun simulate_run(const NetworkTopology& topo, const ForcingConfig& forcing_cfg, const Controller& controller,
                           std::size_t hours, std::uint64_t seed, std::size_t horizon = 24) {
    const Forcing forcing = generate_forcing(forcing_cfg, hours + horizon, seed);
    auto run = simulate_forcing(topo, forcing, forcing_cfg.rain, controller, hours, horizon,
                                initial_state(topo, forcing.tide[0]));
    run.seed = seed;
    return run;
}

inline ts::SeriesFrame simulate(const NetworkTopology& topo, const ForcingConfig& forcing_cfg,
                                const Controller& controller, std::size_t hours, std::uint64_t seed) {
    return simulate_run(topo, forcing_cfg, controller, hours, seed).frame;
}

} // namespace fidlar::hydro
