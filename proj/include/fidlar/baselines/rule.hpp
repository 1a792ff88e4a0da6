#pragma once

#include "../error.hpp"
#include "../hydro/topology.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace fidlar::baselines {

struct RuleTriggers {
    double open = 3.3;  ///< ft; gate opens above this upstream level
    double close = 2.9; ///< ft; gate closes below this upstream level
    double pump = 3.45; ///< ft; pump runs above this upstream level
};

/// Per-structure triggers, indexed like NetworkTopology::structures.
struct RulePolicy {
    std::vector<RuleTriggers> triggers;

    static RulePolicy uniform(std::size_t n_structures, RuleTriggers t = {}) {
        return RulePolicy{std::vector<RuleTriggers>(n_structures, t)};
    }

    void validate(std::size_t n_structures) const {
        if (triggers.size() != n_structures)
            throw ConfigurationError("rule policy has " + std::to_string(triggers.size()) + " entries for " +
                                     std::to_string(n_structures) + " structures");
        for (std::size_t s = 0; s < triggers.size(); ++s)
            if (!(triggers[s].close < triggers[s].open))
                throw ConfigurationError("structure " + std::to_string(s) + ": close trigger must be below open trigger");
    }
};

/// Hysteresis rule for one gate.
inline double rule_gate(const RuleTriggers& t, double level, double previous) {
    if (level > t.open) return 1.0;
    if (level < t.close) return 0.0;
    return previous;
}

inline double rule_pump(const RuleTriggers& t, double level) { return level > t.pump ? 1.0 : 0.0; }

/**
 * Next-step controls from the current upstream levels of each structure.
 * `cell_levels` is indexed by topology cell; `previous` holds the last applied
 * settings in structure order.
 */
inline std::vector<double> rule_schedule(const RulePolicy& policy, const hydro::NetworkTopology& topo,
                                         std::span<const double> cell_levels, std::span<const double> previous) {
    const auto n = topo.structures.size();
    if (previous.size() != n)
        throw StructuralError("rule_schedule: expected " + std::to_string(n) + " previous settings, got " +
                              std::to_string(previous.size()));
    std::vector<double> out(n);
    for (std::size_t s = 0; s < n; ++s) {
        const auto& st = topo.structures[s];
        const double level = cell_levels[static_cast<std::size_t>(st.upstream)];
        if (!std::isfinite(level)) throw ContractViolation("rule_schedule: non-finite level at " + st.id);
        out[s] = st.type == hydro::StructureType::gate ? rule_gate(policy.triggers[s], level, previous[s])
                                                       : rule_pump(policy.triggers[s], level);
    }
    return out;
}

} // namespace fidlar::baselines
