#pragma once

#include "../error.hpp"

#include <string>
#include <vector>

namespace fidlar::hydro {

struct Cell {
    std::string id;
    double area = 0.0;           ///< water surface area, ft^2
    double catchment_area = 0.0; ///< contributing land area feeding the runoff store, ft^2
    double initial_level = 0.0;  ///< ft
};

/// Uncontrolled linear exchange Q = conveyance * (h_a - h_b), cfs.
struct Reach {
    int from = 0;
    int to = 0;
    double conveyance = 0.0; ///< cfs per ft of head difference
};

enum class StructureType { gate, pump };

struct Structure {
    std::string id;
    StructureType type = StructureType::gate;
    int upstream = 0;
    int downstream = 0;
    double capacity = 0.0; ///< gate: cfs per unit opening per sqrt(ft); pump: cfs at setting 1
};

/**
 * River network: storage cells linked by reaches and controllable structures.
 * The boundary cell's level is imposed by the tide; control points are the
 * cells whose levels are reported (and scored).
 */
struct NetworkTopology {
    std::vector<Cell> cells;
    std::vector<Reach> reaches;
    std::vector<Structure> structures;
    int boundary = 0;
    std::vector<int> control_points;

    std::size_t cell_count() const { return cells.size(); }

    int index_of(const std::string& id) const {
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (cells[i].id == id) return static_cast<int>(i);
        throw ConfigurationError("no cell named '" + id + "'");
    }

    /// Symmetric cell adjacency (reaches and structures), zero diagonal.
    std::vector<std::vector<double>> adjacency() const {
        const auto n = cells.size();
        std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
        const auto link = [&](int i, int j) {
            if (i == j) return;
            a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1.0;
            a[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = 1.0;
        };
        for (const auto& r : reaches) link(r.from, r.to);
        for (const auto& s : structures) link(s.upstream, s.downstream);
        return a;
    }

    /// Control points linked to the boundary by a reach (no structure in between).
    std::vector<int> unprotected_points() const {
        std::vector<int> out;
        for (int c : control_points)
            for (const auto& r : reaches)
                if ((r.from == c && r.to == boundary) || (r.to == c && r.from == boundary)) {
                    out.push_back(c);
                    break;
                }
        return out;
    }

    void validate() const {
        const int n = static_cast<int>(cells.size());
        if (n < 2) throw ConfigurationError("topology needs at least two cells");
        if (boundary < 0 || boundary >= n) throw ConfigurationError("boundary cell index out of range");
        const auto check = [&](int c, const std::string& what) {
            if (c < 0 || c >= n) throw ConfigurationError(what + " refers to missing cell " + std::to_string(c));
        };
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (static_cast<int>(i) != boundary && !(cells[i].area > 0.0))
                throw ConfigurationError("cell '" + cells[i].id + "' needs a positive area");
        for (const auto& r : reaches) {
            check(r.from, "reach");
            check(r.to, "reach");
            if (r.conveyance < 0.0) throw ConfigurationError("reach conveyance must be >= 0");
        }
        for (const auto& s : structures) {
            check(s.upstream, "structure '" + s.id + "'");
            check(s.downstream, "structure '" + s.id + "'");
            if (s.upstream == boundary) throw ConfigurationError("structure '" + s.id + "' cannot draw from the boundary");
            if (s.capacity < 0.0) throw ConfigurationError("structure '" + s.id + "' capacity must be >= 0");
        }
        if (control_points.empty()) throw ConfigurationError("topology needs at least one control point");
        for (int c : control_points) {
            check(c, "control point");
            if (c == boundary) throw ConfigurationError("the boundary cell cannot be a control point");
        }
        // connectivity over reaches + structures
        const auto adj = adjacency();
        std::vector<bool> seen(cells.size(), false);
        std::vector<std::size_t> stack{0};
        seen[0] = true;
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            for (std::size_t j = 0; j < cells.size(); ++j)
                if (adj[i][j] > 0.0 && !seen[j]) {
                    seen[j] = true;
                    stack.push_back(j);
                }
        }
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (!seen[i]) throw ConfigurationError("cell '" + cells[i].id + "' is not connected to the network");
    }
};

/**
 * Synthetic stand-in for the coastal test system: three branches (S1, S25A,
 * S25B) drain through a gate and a pump each into a trunk (S26), which
 * exchanges freely with the tidal boundary (S4). All coefficients are
 * synthetic.
 */
inline NetworkTopology default_topology() {
    NetworkTopology t;
    t.cells = {
        {"S1", 3.6e6, 3.25e7, 2.5},
        {"S25A", 3.0e6, 2.5e7, 2.5},
        {"S25B", 4.0e6, 3.5e7, 2.5},
        {"S26", 1.2e7, 3.0e7, 1.6},
        {"S4", 0.0, 0.0, 1.6},
    };
    t.boundary = 4;
    // leak reaches model seepage past closed structures
    t.reaches = {{3, 4, 2400.0}, {0, 3, 2.0}, {1, 3, 2.0}, {2, 3, 2.0}};
    t.structures = {
        {"GATE_S1", StructureType::gate, 0, 3, 180.0},   {"PUMP_S1", StructureType::pump, 0, 3, 110.0},
        {"GATE_S25A", StructureType::gate, 1, 3, 150.0}, {"PUMP_S25A", StructureType::pump, 1, 3, 90.0},
        {"GATE_S25B", StructureType::gate, 2, 3, 198.0}, {"PUMP_S25B", StructureType::pump, 2, 3, 120.0},
    };
    t.control_points = {0, 1, 2, 3};
    return t;
}

} // namespace fidlar::hydro
