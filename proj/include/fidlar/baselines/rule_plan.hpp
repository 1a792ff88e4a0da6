#pragma once

#include "../models/evaluator.hpp"
#include "rule.hpp"

#include <functional>

namespace fidlar::baselines {

/// Structure-to-level-column wiring of a model layout.
struct RuleWiring {
    std::vector<std::size_t> level_index; ///< per structure, index into layout level columns
    std::vector<bool> gate;
};

inline RuleWiring rule_wiring(const models::ModelLayout& L, const hydro::NetworkTopology& topo) {
    if (topo.structures.size() != L.S())
        throw StructuralError("topology has " + std::to_string(topo.structures.size()) + " structures, layout has " +
                              std::to_string(L.S()) + " control columns");
    RuleWiring w;
    for (const auto& st : topo.structures) {
        const auto& cell = topo.cells[static_cast<std::size_t>(st.upstream)].id;
        std::size_t found = L.N();
        for (std::size_t n = 0; n < L.N(); ++n)
            if (L.specs[L.level_cols[n]].station == cell) found = n;
        if (found == L.N()) throw StructuralError("no level column for cell " + cell + " upstream of " + st.id);
        w.level_index.push_back(found);
        w.gate.push_back(st.type == hydro::StructureType::gate);
    }
    return w;
}

/**
 * The rule controller played forward inside one forecast window, with the
 * evaluator standing in for the river: hour j's controls react to the level
 * predicted for hour j-1 (the last observed level for j = 0). Gate memory
 * starts from the last observed settings rounded to open/closed.
 *
 * Needs k batched decoder calls, each on the partial plan so far; unplanned
 * hours repeat the latest decision.
 */
inline std::vector<Mat> rule_plans(const models::EvaluatorModel& ev, const hydro::NetworkTopology& topo,
                                   const RulePolicy& policy, const std::vector<const ts::WindowSample*>& samples) {
    ad::NoGradGuard ng;
    const auto& L = ev.layout();
    policy.validate(L.S());
    const auto wire = rule_wiring(L, topo);
    const std::size_t B = samples.size(), k = L.k(), S = L.S();
    if (B == 0) return {};
    const auto bb = ev.batcher();
    const models::Batch b = bb.make(samples, false);
    const models::Encoded enc = ev.encode(b.past, b.cov);

    std::vector<Mat> plans(B, Mat::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(S)));
    std::vector<std::vector<double>> memory(B, std::vector<double>(S));
    for (std::size_t i = 0; i < B; ++i) {
        const auto last = static_cast<Eigen::Index>(L.w() - 1);
        for (std::size_t s = 0; s < S; ++s)
            memory[i][s] = samples[i]->past(last, static_cast<Eigen::Index>(L.ctrl_cols[s])) >= 0.5 ? 1.0 : 0.0;
    }
    const auto decide = [&](std::size_t i, std::size_t j, const std::function<double(std::size_t)>& level) {
        for (std::size_t s = 0; s < S; ++s) {
            const double h = level(wire.level_index[s]);
            const double u = wire.gate[s] ? rule_gate(policy.triggers[s], h, memory[i][s]) : rule_pump(policy.triggers[s], h);
            memory[i][s] = u;
            for (std::size_t r = j; r < k; ++r) plans[i](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) = u;
        }
    };
    for (std::size_t i = 0; i < B; ++i)
        decide(i, 0, [&](std::size_t n) {
            return samples[i]->past(static_cast<Eigen::Index>(L.w() - 1), static_cast<Eigen::Index>(L.level_cols[n]));
        });
    for (std::size_t j = 1; j < k; ++j) {
        std::vector<const Mat*> ptr;
        for (const auto& p : plans) ptr.push_back(&p);
        const ad::Tensor ctrl = ad::Tensor::constant(bb.controls(ptr));
        const auto pred = models::split_batch(ev.to_ft(ev.decode(enc, b.cov, ctrl)).value());
        for (std::size_t i = 0; i < B; ++i)
            decide(i, j, [&](std::size_t n) { return pred[i](static_cast<Eigen::Index>(j - 1), static_cast<Eigen::Index>(n)); });
    }
    return plans;
}

inline std::vector<Mat> rule_plans(const models::EvaluatorModel& ev, const hydro::NetworkTopology& topo,
                                   const RulePolicy& policy, const std::vector<ts::WindowSample>& samples,
                                   std::size_t chunk = 256) {
    std::vector<Mat> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); i += chunk) {
        std::vector<const ts::WindowSample*> ptrs;
        for (std::size_t j = i; j < std::min(samples.size(), i + chunk); ++j) ptrs.push_back(&samples[j]);
        for (auto& m : rule_plans(ev, topo, policy, ptrs)) out.push_back(std::move(m));
    }
    return out;
}

} // namespace fidlar::baselines
