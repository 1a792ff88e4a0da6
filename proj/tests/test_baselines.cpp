#include "fixtures.hpp"
#include "oracles.hpp"

#include <fidlar/baselines/ga.hpp>
#include <fidlar/baselines/rule_plan.hpp>

#include <gtest/gtest.h>

using namespace fidlar;
using namespace fidlar::baselines;

namespace {

/// Quadratic bowl around a fixed target schedule; its minimum is 0.
BatchFitness bowl(const Mat& target) {
    return [target](const std::vector<Mat>& pop) {
        std::vector<double> out;
        for (const auto& m : pop) out.push_back((m - target).squaredNorm());
        return out;
    };
}

Mat random_schedule(std::size_t k, std::size_t S, Rng& rng) {
    Mat m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(S));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng);
    return m;
}

} // namespace

TEST(GA, DegenerateSettingsReturnTheSeed) {
    Rng rng(1);
    const Mat seed = random_schedule(4, 3, rng);
    GAConfig cfg;
    cfg.population = 2;
    cfg.elitism = 1;
    cfg.sigma = 0.0;
    cfg.crossover = 0.0;
    cfg.generations = 10;
    const auto r = ga_optimize(bowl(Mat::Zero(4, 3)), 4, 3, cfg, {seed});
    EXPECT_EQ(r.best, seed);
    for (double f : r.trace) EXPECT_DOUBLE_EQ(f, seed.squaredNorm());
}

TEST(GA, BestFitnessNeverWorsens) {
    Rng rng(1234);
    for (int trial = 0; trial < 5; ++trial) {
        const Mat target = random_schedule(6, 2, rng);
        GAConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const auto r = ga_optimize(bowl(target), 6, 2, cfg);
        ASSERT_EQ(r.trace.size(), cfg.generations + 1);
        for (std::size_t g = 1; g < r.trace.size(); ++g) EXPECT_LE(r.trace[g], r.trace[g - 1]);
        EXPECT_DOUBLE_EQ(r.fitness, r.trace.back());
        EXPECT_LT(r.fitness, r.trace.front());
        EXPECT_GE(r.best.minCoeff(), 0.0);
        EXPECT_LE(r.best.maxCoeff(), 1.0);
        EXPECT_EQ(r.evaluations, cfg.population + cfg.generations * (cfg.population - cfg.elitism));
    }
}

TEST(GA, DeterministicGivenSeed) {
    Rng rng(3);
    const Mat target = random_schedule(5, 3, rng);
    GAConfig cfg;
    cfg.seed = 77;
    const auto a = ga_optimize(bowl(target), 5, 3, cfg);
    const auto b = ga_optimize(bowl(target), 5, 3, cfg);
    EXPECT_EQ(a.best, b.best);
    EXPECT_EQ(a.trace, b.trace);
    cfg.seed = 78;
    EXPECT_NE(ga_optimize(bowl(target), 5, 3, cfg).trace, a.trace);
}

TEST(GA, SeedsAreNeverLost) {
    const Mat target = Mat::Constant(4, 2, 0.3);
    GAConfig cfg;
    cfg.generations = 5;
    const auto r = ga_optimize(bowl(target), 4, 2, cfg, {target});
    EXPECT_DOUBLE_EQ(r.fitness, 0.0);
}

TEST(GA, RejectsBadConfig) {
    GAConfig cfg;
    cfg.elitism = cfg.population;
    EXPECT_THROW(cfg.validate(), ConfigurationError);
    cfg = {};
    cfg.crossover = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigurationError);
    cfg = {};
    cfg.population = 1;
    EXPECT_THROW(cfg.validate(), ConfigurationError);
    EXPECT_THROW(ga_config_from_json(json{{"sigma", -1.0}}), ConfigurationError);
}

TEST(GA, EvaluatorFitnessNeedsFrozenEvaluator) {
    const auto& t = fidlar::testing::tiny();
    auto ev = models::EvaluatorModel::build(fidlar::testing::small_net(models::Architecture::mlp), t.layout, t.norm, 1);
    const auto& s = t.test[0];
    const auto th = Thresholds::uniform(t.layout.N());
    EXPECT_THROW(ga_optimize(ev, s.past, s.future_cov, th, {}, GAConfig{}), ContractViolation);
    ev.freeze();
    GAConfig cfg;
    cfg.generations = 3;
    const auto r = ga_optimize(ev, s.past, s.future_cov, th, {}, cfg);
    EXPECT_EQ(static_cast<std::size_t>(r.best.rows()), t.layout.k());
    EXPECT_EQ(static_cast<std::size_t>(r.best.cols()), t.layout.S());
    const auto lv = ev.predict(s.past, s.future_cov, r.best).levels;
    EXPECT_NEAR(r.fitness, models::combined_loss(lv, th, {}), 1e-9);
}

TEST(GA, MatchesBruteForceOnCraftedBasin) {
    const fidlar::testing::Basin basin;
    const double grid_best = basin.grid_best();
    ASSERT_GT(grid_best, 0.0);
    EXPECT_LT(grid_best, basin.loss(Mat::Zero(4, 2)));
    EXPECT_LT(grid_best, basin.loss(Mat::Ones(4, 2)));
    const auto r = ga_optimize(basin.fitness(), 4, 2, fidlar::testing::Basin::ga_config());
    EXPECT_LE(r.fitness, 1.05 * grid_best) << "GA " << r.fitness << " vs grid " << grid_best;
}

// ---------------------------------------------------------------------------
// Rule

TEST(Rule, HysteresisAndPumpTriggers) {
    const RuleTriggers t{};
    EXPECT_EQ(rule_gate(t, 3.4, 0.0), 1.0);
    EXPECT_EQ(rule_gate(t, 3.1, 1.0), 1.0);
    EXPECT_EQ(rule_gate(t, 3.1, 0.0), 0.0);
    EXPECT_EQ(rule_gate(t, 2.8, 1.0), 0.0);
    EXPECT_EQ(rule_pump(t, 3.5), 1.0);
    EXPECT_EQ(rule_pump(t, 3.4), 0.0);
    EXPECT_THROW(RulePolicy::uniform(2, RuleTriggers{3.0, 3.0, 3.5}).validate(2), ConfigurationError);
    EXPECT_THROW(RulePolicy::uniform(2).validate(3), ConfigurationError);
}

TEST(Rule, ScheduleReadsEachStructuresUpstreamCell) {
    const auto topo = hydro::default_topology();
    const auto policy = RulePolicy::uniform(topo.structures.size());
    std::vector<double> levels(topo.cells.size(), 1.0);
    levels[static_cast<std::size_t>(topo.index_of("S25A"))] = 3.6;
    const std::vector<double> prev(topo.structures.size(), 0.0);
    const auto u = rule_schedule(policy, topo, levels, prev);
    for (std::size_t s = 0; s < topo.structures.size(); ++s)
        EXPECT_EQ(u[s], topo.cells[static_cast<std::size_t>(topo.structures[s].upstream)].id == "S25A" ? 1.0 : 0.0)
            << topo.structures[s].id;
    levels[static_cast<std::size_t>(topo.index_of("S1"))] = NAN;
    EXPECT_THROW(rule_schedule(policy, topo, levels, prev), ContractViolation);
}
