#pragma once

#include "error.hpp"
#include "hydro/topology.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace fidlar {

/// Per-control-point flood and wastage levels, ft.
struct Thresholds {
    std::vector<double> flood;
    std::vector<double> waste;

    /// Same levels at every point; waste defaults to 1.5 ft below flood.
    static Thresholds uniform(std::size_t points, double flood_level = 3.5, double margin = 1.5) {
        return Thresholds{std::vector<double>(points, flood_level), std::vector<double>(points, flood_level - margin)};
    }

    std::size_t size() const { return flood.size(); }

    void validate(std::size_t points) const {
        if (flood.size() != points || waste.size() != points)
            throw ConfigurationError("thresholds cover " + std::to_string(flood.size()) + "/" +
                                     std::to_string(waste.size()) + " points, expected " + std::to_string(points));
        for (std::size_t i = 0; i < points; ++i)
            if (!(waste[i] < flood[i]))
                throw ConfigurationError("waste threshold must be below flood threshold at point " + std::to_string(i));
    }
};

/**
 * Defaults for a network: `flood_level` everywhere, waste `margin` below it,
 * except at control points tied to the tidal boundary. Those sit below the
 * waste level for half of every tide whatever the structures do, and water
 * released into them is never wasted, so they get `tidal_waste` instead.
 */
inline Thresholds default_thresholds(const hydro::NetworkTopology& topo, double flood_level = 3.5, double margin = 1.5,
                                     double tidal_waste = 0.0) {
    auto th = Thresholds::uniform(topo.control_points.size(), flood_level, margin);
    const auto tidal = topo.unprotected_points();
    for (std::size_t i = 0; i < topo.control_points.size(); ++i)
        if (std::find(tidal.begin(), tidal.end(), topo.control_points[i]) != tidal.end()) th.waste[i] = tidal_waste;
    th.validate(topo.control_points.size());
    return th;
}

} // namespace fidlar
