#pragma once

#include "../baselines/rule.hpp"
#include "../rng.hpp"
#include "sim.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <vector>

namespace fidlar::hydro {

struct DatasetConfig {
    NetworkTopology topology = default_topology();
    ForcingConfig forcing;
    baselines::RulePolicy policy = baselines::RulePolicy::uniform(6);
    double noise = 0.2;          ///< uniform exploration noise amplitude added to every control
    double trigger_jitter = 0.3; ///< per-episode uniform shift of each structure's triggers, ft
    double excursion_rate = 0.0; ///< see Exploration
    double excursion_hours = 6.0;
    std::size_t episode_hours = 792;
    std::size_t horizon = 24;

    void validate() const {
        topology.validate();
        forcing.validate();
        policy.validate(topology.structures.size());
        if (noise < 0.0 || noise > 1.0) throw ConfigurationError("exploration noise must lie in [0,1]");
        if (trigger_jitter < 0.0) throw ConfigurationError("trigger jitter must be >= 0");
        if (excursion_rate < 0.0 || excursion_rate > 1.0) throw ConfigurationError("excursion rate must lie in [0,1]");
        if (!(excursion_hours >= 1.0)) throw ConfigurationError("mean excursion length must be >= 1 hour");
        if (episode_hours < 2) throw ConfigurationError("episodes need at least two hours");
    }
};

/// Off-policy perturbations of the data-generating controller.
struct Exploration {
    double noise = 0.0;          ///< uniform amplitude added to every rule setting
    double excursion_rate = 0.0; ///< per structure-hour chance of starting an excursion
    double excursion_hours = 6.0; ///< mean excursion length (geometric)
};

/**
 * Rule-based controller with optional exploration. During an excursion a
 * structure holds one uniformly drawn setting instead of following the rule.
 * The hysteresis memory tracks the rule's own noise-free decisions, starting
 * from the settings in force when it is first called, rounded to open or
 * closed.
 */
inline Controller rule_controller(baselines::RulePolicy policy, Exploration explore = {}, std::uint64_t seed = 0) {
    struct State {
        std::vector<double> memory;
        std::vector<std::size_t> left; ///< excursion hours remaining
        std::vector<double> held;
        Rng rng;
    };
    auto st = std::make_shared<State>(State{{}, {}, {}, Rng(seed)});
    return [policy = std::move(policy), explore, st](const ControlContext& ctx) {
        if (st->memory.empty()) {
            for (double u : ctx.previous_controls) st->memory.push_back(u >= 0.5 ? 1.0 : 0.0);
            st->left.assign(st->memory.size(), 0);
            st->held.assign(st->memory.size(), 0.0);
        }
        st->memory = baselines::rule_schedule(policy, *ctx.topology, ctx.state->levels, st->memory);
        auto out = st->memory;
        for (std::size_t s = 0; s < out.size(); ++s) {
            if (explore.excursion_rate > 0.0 && st->left[s] == 0 && uniform01(st->rng) < explore.excursion_rate) {
                std::geometric_distribution<std::size_t> length(1.0 / explore.excursion_hours);
                st->left[s] = 1 + length(st->rng);
                st->held[s] = uniform01(st->rng);
            }
            if (st->left[s] > 0) {
                out[s] = st->held[s];
                --st->left[s];
            } else if (explore.noise > 0.0) {
                out[s] = std::clamp(out[s] + uniform(st->rng, -explore.noise, explore.noise), 0.0, 1.0);
            }
        }
        return out;
    };
}

/// Episode counts for a chronological 70/15/15 split (each part non-empty).
struct SplitSizes {
    std::size_t train, val, test;
};

inline SplitSizes split_sizes(std::size_t episodes) {
    if (episodes < 3) throw ConfigurationError("a dataset needs at least 3 episodes");
    const auto part = [&](double f) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(episodes))));
    };
    const std::size_t val = part(0.15), test = part(0.15);
    return {episodes - val - test, val, test};
}

struct Dataset {
    std::vector<SimRun> train, val, test;
};

inline std::vector<ts::SeriesFrame> frames(const std::vector<SimRun>& runs) {
    std::vector<ts::SeriesFrame> out;
    out.reserve(runs.size());
    for (const auto& r : runs) out.push_back(r.frame);
    return out;
}

/// Simulates one episode of the dataset (index i of a dataset seeded with `seed`).
inline SimRun generate_episode(const DatasetConfig& cfg, std::uint64_t seed, std::size_t i) {
    const std::uint64_t ep_seed = derive_seed(seed, i);
    Rng jitter_rng(derive_seed(ep_seed, 7));
    auto policy = cfg.policy;
    for (auto& t : policy.triggers) {
        const double d = uniform(jitter_rng, -cfg.trigger_jitter, cfg.trigger_jitter);
        t.open += d;
        t.close += d;
        t.pump += d;
    }
    auto run = simulate_run(cfg.topology, cfg.forcing, rule_controller(policy, {cfg.noise, cfg.excursion_rate, cfg.excursion_hours}, derive_seed(ep_seed, 8)),
                            cfg.episode_hours, ep_seed, cfg.horizon);
    return run;
}

inline Dataset generate_dataset(const DatasetConfig& cfg, std::size_t n_episodes, std::uint64_t seed) {
    cfg.validate();
    const auto sizes = split_sizes(n_episodes);
    Dataset ds;
    for (std::size_t i = 0; i < n_episodes; ++i) {
        auto run = generate_episode(cfg, seed, i);
        if (i < sizes.train)
            ds.train.push_back(std::move(run));
        else if (i < sizes.train + sizes.val)
            ds.val.push_back(std::move(run));
        else
            ds.test.push_back(std::move(run));
    }
    return ds;
}

} // namespace fidlar::hydro
