#pragma once

// Independent checks shared by the unit tests and the acceptance binary.

#include <fidlar/ad/grad_check.hpp>
#include <fidlar/ad/layers.hpp>
#include <fidlar/baselines/ga.hpp>
#include <fidlar/bench/metrics.hpp>
#include <fidlar/hydro/sim.hpp>
#include <fidlar/models/losses.hpp>

#include "fixtures.hpp"

#include <cmath>
#include <span>

namespace fidlar::testing {

/// Water held by interior cells and their runoff stores, ft^3, computed without the library helpers.
inline double volume_of(const hydro::NetworkTopology& t, const hydro::SimState& s) {
    double v = 0.0;
    for (std::size_t c = 0; c < t.cells.size(); ++c)
        if (static_cast<int>(c) != t.boundary)
            v += s.levels[c] * t.cells[c].area + s.runoff_store[c] * t.cells[c].catchment_area;
    return v;
}

/**
 * Relative volume-balance residual after `steps` random steps on the default
 * network. External flux is booked independently: trunk/boundary exchange
 * plus rain on cells and catchments, plus the simulator's reported clamp.
 */
inline double conservation_residual(std::uint64_t seed, int steps) {
    const auto t = hydro::default_topology();
    const hydro::RainConfig runoff;
    Rng rng(seed);
    auto s = hydro::initial_state(t, 1.6);
    const double v0 = volume_of(t, s);
    double external = 0.0, clamp = 0.0, scale = v0;
    const auto trunk = static_cast<std::size_t>(t.index_of("S26"));
    const double c_trunk = t.reaches[0].conveyance;
    for (int i = 0; i < steps; ++i) {
        std::vector<double> ctrl(t.structures.size()), rain(t.cells.size());
        for (auto& c : ctrl) c = uniform01(rng);
        const double r = uniform01(rng) < 0.2 ? uniform(rng, 0.0, 1.5) : 0.0;
        std::fill(rain.begin(), rain.end(), r);
        const double tide = uniform(rng, 0.5, 2.8);
        external += c_trunk * (tide - s.levels[trunk]) * hydro::step_seconds;
        for (std::size_t c = 0; c < t.cells.size(); ++c)
            if (static_cast<int>(c) != t.boundary)
                external += r / 12.0 * (t.cells[c].area + runoff.runoff_coefficient * t.cells[c].catchment_area);
        hydro::StepFluxes fx;
        s = hydro::step(s, t, ctrl, rain, tide, runoff, &fx);
        clamp += fx.clamp;
        scale = std::max(scale, volume_of(t, s));
    }
    return std::abs(volume_of(t, s) - v0 - external - clamp) / scale;
}

/**
 * Sweeps each gate opening over 0, 0.1, ..., 1 from random states; counts
 * steps where the upstream level rose or the downstream level fell.
 */
inline int gate_monotonicity_violations(std::uint64_t seed, int trials) {
    const auto t = hydro::default_topology();
    Rng rng(seed);
    const std::vector<double> rain(t.cells.size(), 0.0);
    int bad = 0;
    for (int trial = 0; trial < trials; ++trial) {
        auto s = hydro::initial_state(t, 0.0);
        for (std::size_t c = 0; c < t.cells.size(); ++c) s.levels[c] = uniform(rng, 0.2, 5.0);
        const double tide = uniform(rng, 0.5, 2.8);
        std::vector<double> ctrl(t.structures.size());
        for (auto& c : ctrl) c = uniform01(rng);
        for (std::size_t g = 0; g < t.structures.size(); ++g) {
            if (t.structures[g].type != hydro::StructureType::gate) continue;
            const auto up = static_cast<std::size_t>(t.structures[g].upstream);
            const auto dn = static_cast<std::size_t>(t.structures[g].downstream);
            double prev_up = INFINITY, prev_dn = -INFINITY;
            for (int k = 0; k <= 10; ++k) {
                ctrl[g] = k / 10.0;
                const auto next = hydro::step(s, t, ctrl, rain, tide, hydro::RainConfig{});
                bad += next.levels[up] > prev_up + 1e-12;
                bad += next.levels[dn] < prev_dn - 1e-12;
                prev_up = next.levels[up];
                prev_dn = next.levels[dn];
            }
        }
    }
    return bad;
}

/// Per-step loop over one series, the literal definition of the flood metrics.
inline bench::FloodMetrics loop_metrics(std::span<const double> l, double flood, double waste) {
    bench::FloodMetrics m;
    for (double v : l) {
        if (v > flood) {
            ++m.over_time;
            m.over_area += v - flood;
        }
        if (v < waste) {
            ++m.under_time;
            m.under_area += waste - v;
        }
    }
    return m;
}

/// Random array with entries in [lo, hi).
inline ad::Array random_array(ad::Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    ad::Array a(std::move(s));
    for (auto& v : a.data) v = uniform(rng, lo, hi);
    return a;
}

/// Worst grad_check error of a stack using every layer type, at one random point.
inline double layer_stack_grad_error(std::uint64_t seed) {
    using namespace fidlar::ad;
    Rng rng(seed);
    ParamSet ps;
    auto dense = Dense::create(ps, "d", 4, 3, rng);
    auto gru = GruCell::create(ps, "g", 3, 5, rng);
    auto att = Attention::create(ps, "a", 5, rng);
    Array adj({3, 3}, {0, 1, 0, 1, 0, 1, 0, 1, 0});
    auto gmp = GraphMessagePass::create(ps, "m", adj, 5, 2, rng);
    Tensor x = Tensor::leaf(random_array({2, 3, 4}, rng));
    Tensor h0 = Tensor::leaf(random_array({6, 5}, rng, -0.9, 0.9));

    std::vector<Tensor> leaves{x, h0};
    for (const auto& [_, p] : ps) leaves.push_back(p);
    const auto f = [&] {
        Tensor d = tanh(dense(x)); // [2,3,3]
        Tensor rows = reshape(d, {6, 3});
        Tensor h = gru(rows, h0);
        h = gru(rows, h); // two steps
        Tensor tokens = reshape(h, {2, 3, 5});
        auto [out, wts] = att(tokens);
        Tensor g = gmp(add(out, tokens));
        return add(reduce_sum(square(g)), reduce_sum(mul(wts, wts)));
    };
    return grad_check(f, leaves);
}

inline std::vector<ad::Tensor> leaves_of(const ad::ParamSet& ps) {
    std::vector<ad::Tensor> out;
    for (const auto& [_, t] : ps) out.push_back(t);
    return out;
}

/// Random weights everywhere, so zero-initialized heads do not hide paths from the check.
inline void randomize(ad::ParamSet& ps, Rng& rng, double amp = 0.5) {
    for (const auto& [_, t] : ps) {
        ad::Tensor h = t;
        for (auto& v : h.mutable_value().data) v = uniform(rng, -amp, amp);
    }
}

inline ad::Tensor weighted_sum(const ad::Tensor& y, const ad::Array& r) { return ad::reduce_sum(ad::mul(y, ad::constant(r))); }

inline bool same_values(const ad::ParamSet& a, const ad::ParamSet& b) {
    for (const auto& [name, t] : a)
        if (t.value().data != b.at(name).value().data) return false;
    return true;
}

/// grad_check of a randomized tiny evaluator's parameters, through the ft-scale output, at one point.
inline double evaluator_grad_error(models::Architecture a, int point) {
    const auto& t = tiny();
    const auto& L = t.layout;
    Rng rng(1000 + 17 * static_cast<std::uint64_t>(point) + static_cast<std::uint64_t>(a));
    auto ev = models::EvaluatorModel::build(small_net(a), L, t.norm, 100 + static_cast<std::uint64_t>(point));
    randomize(ev.params(), rng);
    const auto i = static_cast<std::size_t>(point) * 2;
    const std::vector<const ts::WindowSample*> s{&t.train[i % t.train.size()], &t.train[(i + 1) % t.train.size()]};
    const auto b = ev.batcher().make(s);
    const auto r = random_array({2, L.k(), L.N()}, rng);
    return ad::grad_check([&] { return weighted_sum(ev.to_ft(ev.forward(b)), r); }, leaves_of(ev.params()));
}

/// grad_check of a manager's parameters through a frozen evaluator of the same architecture.
inline double manager_grad_error(models::Architecture a, int point) {
    const auto& t = tiny();
    const auto& L = t.layout;
    Rng rng(2000 + 17 * static_cast<std::uint64_t>(point) + static_cast<std::uint64_t>(a));
    auto ev = models::EvaluatorModel::build(small_net(a), L, t.norm, 300 + static_cast<std::uint64_t>(point));
    randomize(ev.params(), rng);
    ev.freeze();
    auto m = models::ManagerModel::build(small_net(a), L, t.norm, 400 + static_cast<std::uint64_t>(point));
    randomize(m.params(), rng);
    const auto i = static_cast<std::size_t>(point);
    const std::vector<const ts::WindowSample*> s{&t.val[i % t.val.size()], &t.val[(i + 5) % t.val.size()]};
    const auto b = m.batcher().make(s, false);
    const auto r = random_array({2, L.k(), L.N()}, rng);
    const auto f = [&] { return weighted_sum(ev.to_ft(ev.decode(ev.encode(b.past, b.cov), b.cov, m.forward(b))), r); };
    return ad::grad_check(f, leaves_of(m.params()));
}

/**
 * One flooded cell under steady rain, draining to a low tide through a gate
 * and a pump. The allowed band is 0.3 ft wide, so the best schedule drains
 * hard at first and then holds the level inside the band.
 */
struct Basin {
    hydro::NetworkTopology topo;
    hydro::RainConfig runoff;
    Thresholds th = Thresholds::uniform(1, 3.5, 0.3);
    models::LossWeights w{1.0, 1.0};
    double start = 4.8;
    double tide = 0.2;
    double rain = 0.6; ///< in/hr

    Basin() {
        topo.cells = {{"U", 1.0e6, 0.0, start}, {"T", 0.0, 0.0, tide}};
        topo.boundary = 1;
        topo.structures = {{"GATE_U", hydro::StructureType::gate, 0, 1, 120.0},
                           {"PUMP_U", hydro::StructureType::pump, 0, 1, 90.0}};
        topo.control_points = {0};
        runoff.runoff_coefficient = 0.0;
    }

    double loss(const Mat& u) const {
        auto s = hydro::initial_state(topo, tide);
        const std::vector<double> r(2, rain);
        Mat lv(u.rows(), 1);
        for (Eigen::Index j = 0; j < u.rows(); ++j) {
            const std::vector<double> c{u(j, 0), u(j, 1)};
            s = hydro::step(s, topo, c, r, tide, runoff);
            lv(j, 0) = s.levels[0];
        }
        return models::combined_loss(lv, th, w);
    }

    baselines::BatchFitness fitness() const {
        return [this](const std::vector<Mat>& pop) {
            std::vector<double> out;
            for (const auto& m : pop) out.push_back(loss(m));
            return out;
        };
    }

    /// Exhaustive search over {0, 0.5, 1} for 4 hours x 2 structures.
    double grid_best() const {
        double best = INFINITY;
        Mat u(4, 2);
        for (int code = 0; code < 6561; ++code) {
            int c = code;
            for (Eigen::Index i = 0; i < 8; ++i, c /= 3) u.data()[i] = 0.5 * (c % 3);
            best = std::min(best, loss(u));
        }
        return best;
    }

    /// The GA budget the optimality check documents.
    static baselines::GAConfig ga_config() {
        baselines::GAConfig cfg;
        cfg.population = 16;
        cfg.generations = 30;
        return cfg;
    }
};

} // namespace fidlar::testing
