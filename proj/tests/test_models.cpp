#include "fixtures.hpp"
#include "oracles.hpp"

#include <fidlar/ad/grad_check.hpp>
#include <fidlar/baselines/rule_plan.hpp>

#include <gtest/gtest.h>

using namespace fidlar;
using namespace fidlar::models;
using fidlar::testing::ptrs;
using fidlar::testing::small_net;
using fidlar::testing::tiny;
using fidlar::testing::leaves_of;
using fidlar::testing::random_array;
using fidlar::testing::randomize;
using fidlar::testing::same_values;
using fidlar::testing::weighted_sum;

namespace {

constexpr Architecture all_archs[] = {Architecture::mlp, Architecture::rnn, Architecture::gtn_lite};

EvaluatorModel build_evaluator(Architecture a, std::uint64_t seed = 1) {
    const auto& t = tiny();
    return EvaluatorModel::build(small_net(a), t.layout, t.norm, seed);
}

ManagerModel build_manager(Architecture a, std::uint64_t seed = 3) {
    const auto& t = tiny();
    return ManagerModel::build(small_net(a), t.layout, t.norm, seed);
}

Mat schedule(std::size_t k, std::size_t S, double v) {
    return Mat::Constant(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(S), v);
}

} // namespace

// ---------------------------------------------------------------------------
// Gradients

TEST(Gradients, EvaluatorParametersMatchFiniteDifferences) {
    for (Architecture a : all_archs)
        for (int point = 0; point < 10; ++point) EXPECT_LT(fidlar::testing::evaluator_grad_error(a, point), 1e-4) << to_string(a) << " point " << point;
}

TEST(Gradients, ManagerThroughFrozenEvaluatorMatchFiniteDifferences) {
    for (Architecture a : all_archs)
        for (int point = 0; point < 10; ++point) EXPECT_LT(fidlar::testing::manager_grad_error(a, point), 1e-4) << to_string(a) << " point " << point;
}

TEST(Gradients, FrozenEvaluatorStillPassesScheduleGradients) {
    const auto& t = tiny();
    const auto& L = t.layout;
    Rng rng(303);
    for (Architecture a : all_archs) {
        auto ev = build_evaluator(a);
        randomize(ev.params(), rng);
        ev.freeze();
        const Batch b = ev.batcher().make(ptrs(t.test, 3));
        ad::Tensor ctrl = ad::Tensor::leaf(random_array({3, L.k(), L.S()}, rng, 0.0, 1.0));
        const auto r = random_array({3, L.k(), L.N()}, rng);
        const auto f = [&] { return weighted_sum(ev.to_ft(ev.decode(ev.encode(b.past, b.cov), b.cov, ctrl)), r); };
        EXPECT_LT(ad::grad_check(f, {ctrl}), 1e-4) << to_string(a);
        ctrl.zero_grad();
        f().backward();
        double norm = 0.0;
        for (double g : ctrl.grad().data) norm += g * g;
        EXPECT_GT(norm, 0.0) << to_string(a);
        for (const auto& [_, p] : ev.params()) EXPECT_TRUE(p.grad().data.empty() || p.grad().data == std::vector<double>(p.size(), 0.0));
    }
}

TEST(Gradients, CombinedLossReachesManager) {
    const auto& t = tiny();
    for (Architecture a : all_archs) {
        auto ev = build_evaluator(a);
        Rng rng(404);
        randomize(ev.params(), rng, 0.2);
        ev.freeze();
        auto m = build_manager(a);
        const Batch b = m.batcher().make(ptrs(t.train, 8), false);
        // thresholds low enough that every predicted level floods
        const auto th = Thresholds::uniform(t.layout.N(), -5.0, 1.0);
        const ad::Tensor levels = ev.to_ft(ev.decode(ev.encode(b.past, b.cov), b.cov, m.forward(b)));
        m.params().zero_grad();
        combined_loss(flood_loss(levels, th), wastage_loss(levels, th), LossWeights{}).backward();
        double norm = 0.0;
        for (const auto& [_, p] : m.params())
            for (double g : p.grad().data) norm += g * g;
        EXPECT_GT(norm, 0.0) << to_string(a);
    }
}

// ---------------------------------------------------------------------------
// Evaluator

TEST(Evaluator, FreshModelPredictsPersistence) {
    const auto& t = tiny();
    for (Architecture a : all_archs) {
        const auto ev = build_evaluator(a);
        const auto pred = ev.predict_batch(ptrs(t.test, 5));
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const Mat p = persistence_forecast(t.test[i], t.layout);
            EXPECT_LT((pred[i] - p).cwiseAbs().maxCoeff(), 1e-9) << to_string(a);
        }
    }
}

TEST(Evaluator, OutputShapeAndDeterminism) {
    const auto& t = tiny();
    Rng rng(5);
    for (Architecture a : all_archs) {
        auto e1 = build_evaluator(a, 9);
        auto e2 = build_evaluator(a, 9);
        EXPECT_TRUE(same_values(e1.params(), e2.params()));
        randomize(e1.params(), rng);
        const auto p1 = e1.predict(t.test[0]);
        EXPECT_EQ(static_cast<std::size_t>(p1.levels.rows()), t.layout.k());
        EXPECT_EQ(static_cast<std::size_t>(p1.levels.cols()), t.layout.N());
        EXPECT_TRUE(p1.levels.allFinite());
        EXPECT_EQ(p1.levels, e1.predict(t.test[0]).levels);
        const auto batch = e1.predict_batch(ptrs(t.test, 4));
        EXPECT_LT((batch[0] - p1.levels).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(p1.attention.has_value(), a == Architecture::gtn_lite);
        if (p1.attention) EXPECT_LT((p1.attention->rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    }
}

TEST(Evaluator, ScheduleChangesPrediction) {
    const auto& t = tiny();
    Rng rng(6);
    for (Architecture a : all_archs) {
        auto ev = build_evaluator(a);
        randomize(ev.params(), rng);
        const auto& s = t.test[2];
        const auto closed = ev.predict(s.past, s.future_cov, schedule(t.layout.k(), t.layout.S(), 0.0)).levels;
        const auto open = ev.predict(s.past, s.future_cov, schedule(t.layout.k(), t.layout.S(), 1.0)).levels;
        EXPECT_GT((closed - open).cwiseAbs().maxCoeff(), 1e-6) << to_string(a);
    }
}

TEST(Evaluator, RejectsWrongShapes) {
    const auto& t = tiny();
    const auto ev = build_evaluator(Architecture::gtn_lite);
    const auto& s = t.test[0];
    EXPECT_THROW(ev.predict(s.past, s.future_cov, schedule(t.layout.k() + 1, t.layout.S(), 0.0)), StructuralError);
    EXPECT_THROW(ev.predict(s.past.topRows(3), s.future_cov, s.future_controls), StructuralError);
}

TEST(Evaluator, SaveLoadRoundTrip) {
    const auto& t = tiny();
    fidlar::testing::TempDir dir("fidlar_models");
    Rng rng(7);
    for (Architecture a : all_archs) {
        auto ev = build_evaluator(a);
        randomize(ev.params(), rng);
        ev.meta()["note"] = "kept";
        const auto path = (dir.path / ("ev_" + std::string(to_string(a)))).string();
        ev.save(path);
        const auto back = EvaluatorModel::load(path);
        EXPECT_EQ(back.arch(), a);
        EXPECT_EQ(back.meta().value("note", ""), "kept");
        EXPECT_EQ(ev.predict(t.test[1]).levels, back.predict(t.test[1]).levels);
    }
}

TEST(Evaluator, FreezeKeepsForwardAndBlocksSteps) {
    const auto& t = tiny();
    auto ev = build_evaluator(Architecture::rnn);
    Rng rng(8);
    randomize(ev.params(), rng);
    const auto before = ev.predict(t.test[0]).levels;
    ev.freeze();
    EXPECT_TRUE(ev.frozen());
    EXPECT_EQ(before, ev.predict(t.test[0]).levels);
    ad::Adam opt{ad::AdamConfig{}};
    EXPECT_THROW(opt.step(ev.params()), ContractViolation);
    auto copy = ev.clone();
    EXPECT_TRUE(copy.frozen());
}

TEST(Evaluator, ZeroEpochsLeavesModelUnchanged) {
    const auto& t = tiny();
    auto ev = build_evaluator(Architecture::mlp);
    const auto before = ev.params().clone();
    TrainConfig cfg;
    cfg.epochs = 0;
    train_evaluator(ev, t.train, t.val, cfg);
    EXPECT_TRUE(same_values(before, ev.params()));
}

TEST(Evaluator, ShortTrainingBeatsPersistenceOnTrainWindows) {
    const auto& t = tiny();
    auto ev = build_evaluator(Architecture::rnn);
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 8;
    cfg.lr = 5e-3;
    const auto h = train_evaluator(ev, t.train, t.val, cfg);
    ASSERT_FALSE(h.epochs.empty());
    EXPECT_LT(evaluate_accuracy(ev, t.train).mae, persistence_accuracy(t.train, t.layout).mae);
}

// ---------------------------------------------------------------------------
// Losses

TEST(Losses, WorkedExamples) {
    const auto th = Thresholds::uniform(1, 3.5, 1.0); // waste 2.5
    Mat a(2, 1);
    a << 4.0, 3.0;
    EXPECT_DOUBLE_EQ(flood_loss(a, th), 0.25);
    EXPECT_DOUBLE_EQ(wastage_loss(a, th), 0.0);
    Mat b(2, 1);
    b << 4.5, 4.5;
    EXPECT_DOUBLE_EQ(flood_loss(b, th), 2.0);
    Mat c(1, 1);
    c << 2.0;
    EXPECT_DOUBLE_EQ(wastage_loss(c, th), 0.25);
    Mat edge(2, 1);
    edge << 3.5, 2.5;
    EXPECT_DOUBLE_EQ(flood_loss(edge, th), 0.0);
    EXPECT_DOUBLE_EQ(wastage_loss(edge, th), 0.0);
    EXPECT_DOUBLE_EQ(combined_loss(0.25, 0.25, LossWeights{1.0, 0.1}), 0.275);
    EXPECT_DOUBLE_EQ(combined_loss(0.25, 0.25, LossWeights{1.0, 0.0}), 0.25);
}

TEST(Losses, TensorFormsMatchMatrixForms) {
    Rng rng(9);
    const auto th = Thresholds{{3.5, 3.0, 3.2}, {2.0, 0.0, 1.5}};
    const auto arr = random_array({1, 6, 3}, rng, -0.5, 5.0);
    Mat m(6, 3);
    for (std::size_t i = 0; i < 18; ++i) m(static_cast<Eigen::Index>(i / 3), static_cast<Eigen::Index>(i % 3)) = arr.data[i];
    const auto x = ad::constant(arr);
    EXPECT_NEAR(flood_loss(x, th).item(), flood_loss(m, th), 1e-12);
    EXPECT_NEAR(wastage_loss(x, th).item(), wastage_loss(m, th), 1e-12);
}

TEST(Losses, RejectBadWeightsAndThresholds) {
    EXPECT_THROW((LossWeights{0.0, 0.0}.validate()), ConfigurationError);
    EXPECT_THROW((LossWeights{-1.0, 0.1}.validate()), ConfigurationError);
    EXPECT_THROW((Thresholds{{3.0}, {3.0}}.validate(1)), ConfigurationError);
    Mat m = Mat::Zero(2, 2);
    EXPECT_THROW(flood_loss(m, Thresholds::uniform(3)), ConfigurationError);
}

TEST(Thresholds, TidalPointsGetTheirOwnWasteLevel) {
    const auto topo = hydro::default_topology();
    const auto th = default_thresholds(topo, 3.5, 1.5, 0.0);
    const auto tidal = topo.unprotected_points();
    ASSERT_EQ(tidal.size(), 1u);
    for (std::size_t i = 0; i < topo.control_points.size(); ++i) {
        EXPECT_DOUBLE_EQ(th.flood[i], 3.5);
        EXPECT_DOUBLE_EQ(th.waste[i], topo.control_points[i] == tidal[0] ? 0.0 : 2.0);
    }
}

// ---------------------------------------------------------------------------
// Manager

TEST(Manager, ScheduleShapeRangeAndDeterminism) {
    const auto& t = tiny();
    Rng rng(10);
    for (Architecture a : all_archs) {
        auto m = build_manager(a);
        randomize(m.params(), rng, 2.0);
        const auto& s = t.test[3];
        const Mat u = m.suggest_schedule(s.past, s.future_cov);
        EXPECT_EQ(static_cast<std::size_t>(u.rows()), t.layout.k());
        EXPECT_EQ(static_cast<std::size_t>(u.cols()), t.layout.S());
        EXPECT_GE(u.minCoeff(), 0.0);
        EXPECT_LE(u.maxCoeff(), 1.0);
        EXPECT_EQ(u, m.suggest_schedule(s.past, s.future_cov));
        const auto all = m.suggest_all(t.test, 7);
        ASSERT_EQ(all.size(), t.test.size());
        EXPECT_LT((all[3] - u).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Manager, InitialBiasSetsStartingSchedule) {
    const auto& t = tiny();
    for (Architecture a : all_archs) {
        const auto m = ManagerModel::build(small_net(a), t.layout, t.norm, 3, -1.0);
        const Mat u = m.suggest_schedule(t.test[0].past, t.test[0].future_cov);
        // output weights are random, so only the mean sits near sigmoid(-1)
        EXPECT_LT(u.mean(), 0.5) << to_string(a);
    }
}

TEST(Manager, SaveLoadRoundTrip) {
    const auto& t = tiny();
    fidlar::testing::TempDir dir("fidlar_manager");
    Rng rng(11);
    for (Architecture a : all_archs) {
        auto m = build_manager(a);
        randomize(m.params(), rng);
        const auto path = (dir.path / ("mgr_" + std::string(to_string(a)))).string();
        m.save(path);
        const auto back = ManagerModel::load(path);
        const auto& s = t.test[4];
        EXPECT_EQ(m.suggest_schedule(s.past, s.future_cov), back.suggest_schedule(s.past, s.future_cov));
    }
}

TEST(Manager, TrainingNeedsFrozenEvaluator) {
    const auto& t = tiny();
    const auto ev = build_evaluator(Architecture::mlp);
    auto m = build_manager(Architecture::mlp);
    ManagerTrainConfig cfg;
    cfg.epochs = 1;
    EXPECT_THROW(train_manager(m, ev, t.train, t.val, Thresholds::uniform(t.layout.N()), {}, cfg), ContractViolation);
}

TEST(Manager, IncompatibleLayoutsAreRejected) {
    const auto& t = tiny();
    auto ev = build_evaluator(Architecture::mlp);
    ev.freeze();
    auto L = t.layout;
    L.window.k += 1;
    auto m = ManagerModel::build(small_net(Architecture::mlp), L, t.norm, 3);
    EXPECT_THROW(check_compatible(m, ev), StructuralError);
}

TEST(Manager, FiveHundredStepsLeaveEvaluatorBitIdentical) {
    const auto& t = tiny();
    for (Architecture a : all_archs) {
        auto ev = build_evaluator(a);
        Rng rng(12);
        randomize(ev.params(), rng, 0.3);
        ev.freeze();
        const auto before = ev.params().clone();
        auto m = build_manager(a);
        const auto m0 = m.params().clone();
        ManagerTrainConfig cfg;
        cfg.epochs = 1000;
        cfg.batch_size = 4;
        cfg.max_steps = 500;
        cfg.patience = 1000;
        const auto th = Thresholds::uniform(t.layout.N(), 1.5, 1.0);
        const auto h = train_manager(m, ev, t.train, t.val, th, {}, cfg);
        EXPECT_EQ(h.steps, 500u) << to_string(a);
        EXPECT_TRUE(same_values(before, ev.params())) << to_string(a);
        EXPECT_FALSE(same_values(m0, m.params())) << to_string(a);
    }
}

TEST(Manager, TrainingLowersValidationLoss) {
    const auto& t = tiny();
    auto ev = build_evaluator(Architecture::rnn);
    Rng rng(13);
    randomize(ev.params(), rng, 0.3);
    ev.freeze();
    auto m = build_manager(Architecture::rnn);
    const auto th = Thresholds::uniform(t.layout.N(), 1.5, 1.0);
    const LossWeights w{};
    const double start = mean_loss(schedule_losses(ev, t.val, m.suggest_all(t.val), th, w)).combined;
    ManagerTrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    const auto h = train_manager(m, ev, t.train, t.val, th, w, cfg);
    const double end = mean_loss(schedule_losses(ev, t.val, m.suggest_all(t.val), th, w)).combined;
    EXPECT_NEAR(end, h.best_val_loss, 1e-9 * std::max(1.0, end));
    EXPECT_LT(end, start);
}

TEST(Manager, ScheduleLossesMatchPredictions) {
    const auto& t = tiny();
    auto ev = build_evaluator(Architecture::gtn_lite);
    Rng rng(14);
    randomize(ev.params(), rng, 0.3);
    ev.freeze();
    const auto th = default_thresholds(t.dcfg.topology);
    const LossWeights w{1.0, 0.1};
    std::vector<Mat> sched;
    for (std::size_t i = 0; i < t.test.size(); ++i) sched.push_back(schedule(t.layout.k(), t.layout.S(), uniform01(rng)));
    const auto losses = schedule_losses(ev, t.test, sched, th, w, 5);
    ASSERT_EQ(losses.size(), t.test.size());
    for (std::size_t i = 0; i < t.test.size(); ++i) {
        const auto lv = ev.predict(t.test[i].past, t.test[i].future_cov, sched[i]).levels;
        EXPECT_NEAR(losses[i].combined, combined_loss(lv, th, w), 1e-9);
    }
}

// ---------------------------------------------------------------------------
// Rule plans inside the evaluator

TEST(RulePlans, FirstHourFollowsObservedLevelsAndMemory) {
    const auto& t = tiny();
    const auto& L = t.layout;
    const auto& topo = t.dcfg.topology;
    const auto ev = build_evaluator(Architecture::mlp); // fresh: predicts persistence
    const auto policy = baselines::RulePolicy::uniform(topo.structures.size());
    const auto wire = baselines::rule_wiring(L, topo);

    ts::WindowSample s = t.test[0];
    const auto last = static_cast<Eigen::Index>(L.w() - 1);
    // S1 high, S25A inside the hysteresis band with its gate open, S25B in the band with it closed
    const std::vector<double> level{4.0, 3.1, 3.1};
    const std::vector<double> prev{0.0, 1.0, 0.0};
    for (std::size_t st = 0; st < topo.structures.size(); ++st) {
        const auto up = static_cast<std::size_t>(topo.structures[st].upstream);
        ASSERT_LT(up, 3u);
        s.past(last, static_cast<Eigen::Index>(L.level_cols[wire.level_index[st]])) = level[up];
        s.past(last, static_cast<Eigen::Index>(L.ctrl_cols[st])) = wire.gate[st] ? prev[up] : 0.0;
    }
    const auto plan = baselines::rule_plans(ev, topo, policy, std::vector<const ts::WindowSample*>{&s})[0];
    for (std::size_t st = 0; st < topo.structures.size(); ++st) {
        const auto up = static_cast<std::size_t>(topo.structures[st].upstream);
        const double expect = wire.gate[st] ? (up == 0 ? 1.0 : prev[up]) : (up == 0 ? 1.0 : 0.0);
        for (std::size_t j = 0; j < L.k(); ++j)
            EXPECT_EQ(plan(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(st)), expect)
                << topo.structures[st].id << " hour " << j;
    }
}
