#include "oracles.hpp"

#include <fidlar/hydro/config.hpp>
#include <fidlar/hydro/dataset.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace fidlar;
using namespace fidlar::hydro;

namespace {

// One storage cell draining to the boundary; optionally a donor cell feeding it by pump.
NetworkTopology single_cell(double area, double conveyance) {
    NetworkTopology t;
    t.cells = {{"A", area, 0.0, 0.0}, {"B", 0.0, 0.0, 0.0}};
    t.boundary = 1;
    t.reaches = {{0, 1, conveyance}};
    t.control_points = {0};
    return t;
}

RainConfig no_runoff() {
    RainConfig r;
    r.runoff_coefficient = 0.0;
    return r;
}

} // namespace

TEST(GateFlow, OrificeExamples) {
    EXPECT_DOUBLE_EQ(gate_flow(0.5, 4.0, 0.0, 100.0), 100.0);
    EXPECT_DOUBLE_EQ(gate_flow(0.0, 4.0, 0.0, 100.0), 0.0);
    EXPECT_DOUBLE_EQ(gate_flow(1.0, 4.0, 5.0, 100.0), 0.0);
}

TEST(Step, NetInflowRaisesLevelByVolumeOverArea) {
    // 1000 cfs from the boundary for one hour over 3.6e6 ft^2
    auto t = single_cell(3.6e6, 1000.0);
    SimState s{{0.0, 0.0}, {0.0, 0.0}};
    const std::vector<double> rain{0.0, 0.0};
    const auto next = step(s, t, {}, rain, 1.0, no_runoff());
    EXPECT_NEAR(next.levels[0], 1.0, 1e-12);
}

TEST(Step, PumpFlowIsIndependentOfHead) {
    NetworkTopology t;
    t.cells = {{"UP", 3.6e6, 0.0, 10.0}, {"DN", 3.6e6, 0.0, 0.0}, {"B", 0.0, 0.0, 0.0}};
    t.boundary = 2;
    t.reaches = {{1, 2, 0.0}};
    t.structures = {{"P", StructureType::pump, 0, 1, 1000.0}};
    t.control_points = {0, 1};
    const std::vector<double> rain(3, 0.0);
    for (double dn : {0.0, 5.0, 20.0}) {
        SimState s{{10.0, dn, 0.0}, {0.0, 0.0, 0.0}};
        const std::vector<double> ctrl{1.0};
        const auto next = step(s, t, ctrl, rain, 0.0, no_runoff());
        EXPECT_NEAR(next.levels[0], 9.0, 1e-12);
        EXPECT_NEAR(next.levels[1], dn + 1.0, 1e-12);
    }
}

TEST(Step, EquilibriumLeavesStateUnchanged) {
    const auto t = default_topology();
    SimState s = initial_state(t, 1.7);
    for (auto& l : s.levels) l = 1.7;
    const std::vector<double> ctrl(t.structures.size(), 0.0), rain(t.cells.size(), 0.0);
    const auto next = step(s, t, ctrl, rain, 1.7, RainConfig{});
    for (std::size_t c = 0; c < t.cells.size(); ++c) EXPECT_DOUBLE_EQ(next.levels[c], s.levels[c]);
    for (double r : next.runoff_store) EXPECT_DOUBLE_EQ(r, 0.0);
}

TEST(Step, VolumeConservedOverRandomSteps) {
    for (std::uint64_t seed : {2024u, 7u, 99u}) EXPECT_LT(fidlar::testing::conservation_residual(seed, 1000), 1e-6) << seed;
}

TEST(Step, GateOpeningIsMonotone) {
    EXPECT_EQ(fidlar::testing::gate_monotonicity_violations(7, 50), 0);
}

TEST(Step, NonFiniteForcingNamesCell) {
    const auto t = default_topology();
    const auto s = initial_state(t, 1.6);
    const std::vector<double> ctrl(t.structures.size(), 0.0);
    std::vector<double> rain(t.cells.size(), 0.0);
    rain[2] = NAN;
    try {
        step(s, t, ctrl, rain, 1.6, RainConfig{});
        FAIL() << "expected SimulationFault";
    } catch (const SimulationFault& e) {
        EXPECT_EQ(e.cell(), 2);
        EXPECT_NE(std::string(e.what()).find("S25B"), std::string::npos);
    }
    rain[2] = 0.0;
    EXPECT_THROW(step(s, t, ctrl, rain, INFINITY, RainConfig{}), SimulationFault);
}

TEST(Forcing, TideAutocorrelationPeaksNearTwelveHours) {
    TideConfig cfg;
    Rng rng(11);
    const auto tide = generate_tide(cfg, 3000, rng);
    const double mean = std::accumulate(tide.begin(), tide.end(), 0.0) / static_cast<double>(tide.size());
    const auto acf = [&](std::size_t lag) {
        double num = 0.0;
        for (std::size_t i = 0; i + lag < tide.size(); ++i) num += (tide[i] - mean) * (tide[i + lag] - mean);
        return num;
    };
    std::size_t best = 0;
    double best_v = -INFINITY;
    for (std::size_t lag = 6; lag <= 18; ++lag)
        if (acf(lag) > best_v) {
            best_v = acf(lag);
            best = lag;
        }
    EXPECT_GE(best, 11u);
    EXPECT_LE(best, 13u);
}

TEST(Forcing, RainIsNonNegativeWithDrySpells) {
    RainConfig cfg;
    Rng rng(3);
    const auto rain = generate_rain(cfg, 5000, rng);
    std::size_t wet = 0;
    for (double r : rain) {
        EXPECT_GE(r, 0.0);
        wet += r > 0.0;
    }
    EXPECT_GT(wet, 0u);
    EXPECT_LT(wet, rain.size() / 2);
}

TEST(Simulate, DeterministicGivenSeed) {
    const auto t = default_topology();
    const ForcingConfig f;
    const auto a = simulate(t, f, rule_controller(baselines::RulePolicy::uniform(6), {0.2}, 5), 300, 99);
    const auto b = simulate(t, f, rule_controller(baselines::RulePolicy::uniform(6), {0.2}, 5), 300, 99);
    EXPECT_EQ(a.values(), b.values());
    const auto c = simulate(t, f, rule_controller(baselines::RulePolicy::uniform(6), {0.2}, 5), 300, 100);
    EXPECT_NE(a.values(), c.values());
}

TEST(Simulate, FrameShapeAndRoles) {
    const auto frame = simulate(default_topology(), ForcingConfig{}, all_closed_controller(), 96, 1);
    EXPECT_EQ(frame.rows(), 96u);
    ASSERT_EQ(frame.cols(), 12u);
    EXPECT_EQ(frame.level_columns().size(), 4u);
    EXPECT_EQ(frame.covariate_columns().size(), 2u);
    EXPECT_EQ(frame.control_columns().size(), 6u);
    EXPECT_EQ(frame.specs()[4].name, "WS_S4");
    EXPECT_EQ(frame.specs()[4].role, ts::Role::tide);
}

TEST(Simulate, AllClosedDrySpellDecaysTowardTidalMean) {
    const auto t = default_topology();
    ForcingConfig fc;
    Rng rng(5);
    const std::size_t hours = 6000;
    Forcing forcing{generate_tide(fc.tide, hours + 24, rng), std::vector<double>(hours + 24, 0.0)};
    SimState start = initial_state(t, forcing.tide[0]);
    for (int c : t.control_points) start.levels[static_cast<std::size_t>(c)] = 4.0;
    const auto run = simulate_forcing(t, forcing, fc.rain, all_closed_controller(), hours, 24, start);
    const auto& v = run.frame.values();
    for (Eigen::Index c = 0; c < 4; ++c) {
        double late = 0.0;
        for (Eigen::Index r = v.rows() - 240; r < v.rows(); ++r) late += v(r, c);
        late /= 240.0;
        EXPECT_LT(std::abs(late - fc.tide.mean), 0.05) << "column " << c;
    }
}

TEST(Dataset, ChronologicalSplit) {
    const auto s = split_sizes(20);
    EXPECT_EQ(s.train, 14u);
    EXPECT_EQ(s.val, 3u);
    EXPECT_EQ(s.test, 3u);
    const auto small = split_sizes(3);
    EXPECT_EQ(small.train + small.val + small.test, 3u);
    EXPECT_GE(small.val, 1u);
    EXPECT_THROW(split_sizes(2), ConfigurationError);

    DatasetConfig cfg;
    cfg.episode_hours = 120;
    const auto ds = generate_dataset(cfg, 20, 4);
    EXPECT_EQ(ds.train.size(), 14u);
    EXPECT_EQ(ds.val.size(), 3u);
    EXPECT_EQ(ds.test.size(), 3u);
    // episode i is the same whichever split it lands in
    EXPECT_EQ(ds.test[0].frame.values(), generate_episode(cfg, 4, 17).frame.values());
}

TEST(Dataset, ZeroNoiseReproducesRule) {
    DatasetConfig cfg;
    cfg.noise = 0.0;
    cfg.trigger_jitter = 0.0;
    cfg.episode_hours = 400;
    const auto run = generate_episode(cfg, 12, 0);
    const auto& v = run.frame.values();
    const auto& t = cfg.topology;
    // replay the hysteresis rule on the recorded levels
    std::vector<double> mem(6, 0.0);
    for (Eigen::Index r = 1; r < v.rows(); ++r) {
        for (std::size_t s = 0; s < 6; ++s) {
            const auto& st = t.structures[s];
            const double level = v(r - 1, st.upstream); // upstream cells are the first control points
            const auto& trig = cfg.policy.triggers[s];
            if (st.type == StructureType::pump)
                mem[s] = level > trig.pump ? 1.0 : 0.0;
            else if (level > trig.open)
                mem[s] = 1.0;
            else if (level < trig.close)
                mem[s] = 0.0;
            EXPECT_EQ(v(r, 6 + static_cast<Eigen::Index>(s)), mem[s]) << "row " << r << " structure " << s;
        }
    }
}

TEST(Dataset, NoisyControlsStayInUnitInterval) {
    DatasetConfig cfg;
    cfg.episode_hours = 500;
    const auto run = generate_episode(cfg, 77, 3);
    const auto& v = run.frame.values();
    bool fractional = false;
    for (auto c : run.frame.control_columns())
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            const double x = v(r, static_cast<Eigen::Index>(c));
            EXPECT_GE(x, 0.0);
            EXPECT_LE(x, 1.0);
            fractional = fractional || (x > 0.0 && x < 1.0);
        }
    EXPECT_TRUE(fractional);
}

TEST(Dataset, RuleControlFloodRateIsModerate) {
    DatasetConfig cfg;
    cfg.noise = 0.0;
    cfg.trigger_jitter = 0.0;
    const auto ds = generate_dataset(cfg, 20, 42);
    std::size_t hours = 0, flooded = 0;
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const auto& run : *split) {
            const auto& v = run.frame.values();
            for (Eigen::Index r = 72; r < v.rows(); ++r) {
                ++hours;
                flooded += (v.row(r).head(4).array() > 3.5).any();
            }
        }
    const double rate = static_cast<double>(flooded) / static_cast<double>(hours);
    EXPECT_GE(rate, 0.02);
    EXPECT_LE(rate, 0.05);
}

TEST(Topology, DefaultShapeAndValidation) {
    const auto t = default_topology();
    EXPECT_NO_THROW(t.validate());
    EXPECT_EQ(t.cells.size(), 5u);
    EXPECT_EQ(t.structures.size(), 6u);
    EXPECT_EQ(t.control_points.size(), 4u);
    EXPECT_EQ(t.unprotected_points(), std::vector<int>{3});

    auto broken = t;
    broken.structures[0].upstream = 9;
    EXPECT_THROW(broken.validate(), ConfigurationError);
    auto island = t;
    island.cells.push_back({"X", 1e6, 0.0, 1.0});
    EXPECT_THROW(island.validate(), ConfigurationError);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
    DatasetConfig cfg;
    cfg.noise = 0.1;
    cfg.forcing.rain.arrival_rate = 0.02;
    const auto j = dataset_config_to_json(cfg);
    const auto back = dataset_config_from_json(j);
    EXPECT_EQ(dataset_config_to_json(back), j);

    auto bad = j;
    bad["forcing"]["rain"]["arival_rate"] = 0.1;
    try {
        dataset_config_from_json(bad);
        FAIL() << "expected ConfigurationError";
    } catch (const ConfigurationError& e) {
        EXPECT_NE(std::string(e.what()).find("arival_rate"), std::string::npos);
    }
    auto out_of_range = j;
    out_of_range["forcing"]["rain"]["arrival_rate"] = 1.5;
    EXPECT_THROW(dataset_config_from_json(out_of_range), ConfigurationError);
}
