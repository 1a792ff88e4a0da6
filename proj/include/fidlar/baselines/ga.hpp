#pragma once

#include "../models/evaluator.hpp"
#include "../models/losses.hpp"
#include "../rng.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>

namespace fidlar::baselines {

using json = nlohmann::json;

struct GAConfig {
    std::size_t population = 32;
    std::size_t generations = 50;
    double crossover = 0.9;     ///< chance a child mixes two parents
    double mutation_rate = 0.1; ///< per-gene chance of a Gaussian kick
    double sigma = 0.2;
    std::size_t elitism = 2;
    std::size_t tournament = 3;
    std::uint64_t seed = 1;

    void validate() const {
        if (population < 2) throw ConfigurationError("GA population must be at least 2");
        if (crossover < 0.0 || crossover > 1.0 || mutation_rate < 0.0 || mutation_rate > 1.0)
            throw ConfigurationError("GA rates must lie in [0,1]");
        if (sigma < 0.0) throw ConfigurationError("GA mutation sigma must be >= 0");
        if (elitism >= population) throw ConfigurationError("GA elitism must be below the population size");
        if (tournament == 0) throw ConfigurationError("GA tournament size must be positive");
    }
};

inline json ga_config_to_json(const GAConfig& c) {
    return {{"population", c.population}, {"generations", c.generations}, {"crossover", c.crossover},
            {"mutation_rate", c.mutation_rate}, {"sigma", c.sigma}, {"elitism", c.elitism},
            {"tournament", c.tournament}, {"seed", c.seed}};
}

inline GAConfig ga_config_from_json(const json& j, GAConfig c = {}) {
    c.population = j.value("population", c.population);
    c.generations = j.value("generations", c.generations);
    c.crossover = j.value("crossover", c.crossover);
    c.mutation_rate = j.value("mutation_rate", c.mutation_rate);
    c.sigma = j.value("sigma", c.sigma);
    c.elitism = j.value("elitism", c.elitism);
    c.tournament = j.value("tournament", c.tournament);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

struct GAResult {
    Mat best;                  ///< [k x S]
    double fitness = 0.0;
    std::vector<double> trace; ///< best fitness after initialization and after each generation
    std::size_t evaluations = 0;
};

/// Scores a whole generation at once; lower is better.
using BatchFitness = std::function<std::vector<double>(const std::vector<Mat>&)>;

/**
 * Generational GA over [k x S] schedules in [0,1]: tournament selection,
 * uniform crossover, per-gene Gaussian mutation clipped to [0,1], elitism.
 *
 * The initial population holds `seeds`, then mutated copies of the seeds
 * for half of the free slots (rounded up), then uniform random schedules.
 * Without seeds it is all random.
 */
inline GAResult ga_optimize(const BatchFitness& fitness, std::size_t k, std::size_t S, const GAConfig& cfg,
                            const std::vector<Mat>& seeds = {}) {
    cfg.validate();
    const auto rows = static_cast<Eigen::Index>(k), cols = static_cast<Eigen::Index>(S);
    for (const auto& s : seeds)
        if (s.rows() != rows || s.cols() != cols)
            throw StructuralError("GA seed is " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                                  ", expected " + std::to_string(k) + "x" + std::to_string(S));
    Rng rng(cfg.seed);
    const auto mutate = [&](Mat& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i)
            if (uniform01(rng) < cfg.mutation_rate) m.data()[i] = std::clamp(m.data()[i] + normal(rng, 0.0, cfg.sigma), 0.0, 1.0);
    };
    const auto random_schedule = [&] {
        Mat m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng);
        return m;
    };

    std::vector<Mat> pop;
    for (std::size_t i = 0; i < seeds.size() && pop.size() < cfg.population; ++i) pop.push_back(seeds[i]);
    if (!seeds.empty()) {
        const std::size_t copies = (cfg.population - pop.size() + 1) / 2;
        for (std::size_t i = 0; i < copies; ++i) {
            Mat m = seeds[i % seeds.size()];
            mutate(m);
            pop.push_back(std::move(m));
        }
    }
    while (pop.size() < cfg.population) pop.push_back(random_schedule());

    GAResult res;
    std::vector<double> fit = fitness(pop);
    res.evaluations += pop.size();
    if (fit.size() != pop.size()) throw StructuralError("fitness returned the wrong number of scores");
    std::vector<std::size_t> order(pop.size());
    const auto rank = [&] {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fit[a] < fit[b]; });
    };
    rank();
    res.trace.push_back(fit[order[0]]);

    const auto pick = [&]() -> const Mat& {
        std::size_t best = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pop.size())) % pop.size();
        for (std::size_t t = 1; t < cfg.tournament; ++t) {
            const std::size_t c = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pop.size())) % pop.size();
            if (fit[c] < fit[best]) best = c;
        }
        return pop[best];
    };

    for (std::size_t g = 0; g < cfg.generations; ++g) {
        std::vector<Mat> next;
        std::vector<double> next_fit;
        for (std::size_t e = 0; e < cfg.elitism; ++e) {
            next.push_back(pop[order[e]]);
            next_fit.push_back(fit[order[e]]);
        }
        std::vector<Mat> children;
        while (next.size() + children.size() < cfg.population) {
            Mat child = pick();
            if (uniform01(rng) < cfg.crossover) {
                const Mat& other = pick();
                for (Eigen::Index i = 0; i < child.size(); ++i)
                    if (uniform01(rng) < 0.5) child.data()[i] = other.data()[i];
            }
            mutate(child);
            children.push_back(std::move(child));
        }
        const auto child_fit = fitness(children);
        res.evaluations += children.size();
        for (std::size_t i = 0; i < children.size(); ++i) {
            next.push_back(std::move(children[i]));
            next_fit.push_back(child_fit[i]);
        }
        pop = std::move(next);
        fit = std::move(next_fit);
        rank();
        res.trace.push_back(fit[order[0]]);
    }
    res.best = pop[order[0]];
    res.fitness = fit[order[0]];
    return res;
}

/**
 * Fitness of candidate schedules for one window: the combined loss of the
 * evaluator's predicted levels, the manager's objective. The evaluator is
 * called as a black box on the full window once per generation.
 */
inline BatchFitness evaluator_fitness(const models::EvaluatorModel& ev, const Mat& past, const Mat& future_cov,
                                      const Thresholds& th, const models::LossWeights& w) {
    if (!ev.frozen()) throw ContractViolation("GA fitness needs a frozen evaluator");
    th.validate(ev.layout().N());
    w.validate();
    return [&ev, past, future_cov, th, w](const std::vector<Mat>& pop) {
        ad::NoGradGuard ng;
        const auto bb = ev.batcher();
        std::vector<const Mat*> p(pop.size(), &past), c(pop.size(), &future_cov), u;
        for (const auto& m : pop) u.push_back(&m);
        std::vector<double> out;
        for (const auto& lv : models::split_batch(ev.to_ft(ev.forward(bb.make(p, c, u))).value()))
            out.push_back(models::combined_loss(lv, th, w));
        return out;
    };
}

inline GAResult ga_optimize(const models::EvaluatorModel& ev, const Mat& past, const Mat& future_cov,
                            const Thresholds& th, const models::LossWeights& w, const GAConfig& cfg,
                            const std::vector<Mat>& seeds = {}) {
    return ga_optimize(evaluator_fitness(ev, past, future_cov, th, w), ev.layout().k(), ev.layout().S(), cfg, seeds);
}

} // namespace fidlar::baselines
