#include "fixtures.hpp"

#include <fidlar/explain/report.hpp>

#include <gtest/gtest.h>

using namespace fidlar;
using namespace fidlar::explain;
using fidlar::testing::small_net;
using fidlar::testing::tiny;

namespace {

ScalarBatchFn linear(Eigen::VectorXd beta, double c) {
    return [beta, c](const Mat& X) { return Eigen::VectorXd((X * beta).array() + c); };
}

models::EvaluatorModel fresh(models::Architecture a) {
    const auto& t = tiny();
    return models::EvaluatorModel::build(small_net(a), t.layout, t.norm, 1);
}

std::vector<double> train_std() { return variable_std(hydro::frames(tiny().data.train)); }

AttributionHeatmap blank_map(const models::ModelLayout& L, double r2) {
    AttributionHeatmap h;
    h.w = L.w();
    h.k = L.k();
    h.r2 = r2;
    h.coef = Mat::Zero(static_cast<Eigen::Index>(L.V()), static_cast<Eigen::Index>(L.w() + L.k()));
    h.importance = h.coef;
    return h;
}

} // namespace

// ---------------------------------------------------------------------------
// LIME core

TEST(Lime, RecoversLinearCoefficients) {
    Eigen::VectorXd beta(2);
    beta << 2.0, 0.0;
    Eigen::VectorXd x0(2), scale(2);
    x0 << 1.0, -3.0;
    scale << 1.0, 1.0;
    const auto fit = lime(linear(beta, 0.0), x0, scale, LimeConfig{});
    EXPECT_NEAR(fit.coef(0), 2.0, 0.1);
    EXPECT_NEAR(fit.coef(1), 0.0, 0.1);
    EXPECT_GT(fit.r2, 0.99);
    EXPECT_NEAR(fit.intercept, 2.0, 0.05);
}

TEST(Lime, CoefficientsAreInInputUnits) {
    Eigen::VectorXd beta(3);
    beta << 3.0, 0.0, -0.5;
    Eigen::VectorXd x0(3), scale(3);
    x0 << 0.2, 10.0, 4.0;
    scale << 0.01, 5.0, 50.0;
    LimeConfig cfg;
    cfg.n_perturb = 400;
    const auto fit = lime(linear(beta, 7.0), x0, scale, cfg);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(fit.coef(i), beta(i), 0.05 * std::abs(beta(i)) + 0.01) << i;
    EXPECT_NEAR(fit.intercept, beta.dot(x0) + 7.0, 1e-3);
}

TEST(Lime, ConstantCellGetsZero) {
    Eigen::VectorXd beta(3);
    beta << 1.0, 5.0, -1.0;
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3), scale(3);
    scale << 1.0, 0.0, 1.0;
    const auto fit = lime(linear(beta, 0.0), x0, scale, LimeConfig{});
    EXPECT_EQ(fit.coef(1), 0.0);
    EXPECT_NEAR(fit.coef(0), 1.0, 0.05);
    EXPECT_NEAR(fit.coef(2), -1.0, 0.05);
}

TEST(Lime, NonlinearModelLowersFidelity) {
    const ScalarBatchFn bumpy = [](const Mat& X) { return Eigen::VectorXd(X.col(0).array().sin() * 10.0 + X.col(1).array().square()); };
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2), scale = Eigen::VectorXd::Constant(2, 20.0);
    const auto fit = lime(bumpy, x0, scale, LimeConfig{});
    EXPECT_LT(fit.r2, 0.6);
}

TEST(Lime, DeterministicAndValidated) {
    Eigen::VectorXd beta = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(5), scale = Eigen::VectorXd::Ones(5);
    const auto a = lime(linear(beta, 0.0), x0, scale, LimeConfig{});
    const auto b = lime(linear(beta, 0.0), x0, scale, LimeConfig{});
    EXPECT_EQ(a.coef, b.coef);
    EXPECT_EQ(a.samples, 50u);
    EXPECT_THROW(lime(linear(beta, 0.0), x0, Eigen::VectorXd::Ones(4), LimeConfig{}), StructuralError);
    const ScalarBatchFn nan = [](const Mat& X) { return Eigen::VectorXd::Constant(X.rows(), NAN); };
    EXPECT_THROW(lime(nan, x0, scale, LimeConfig{}), ContractViolation);
    LimeConfig bad;
    bad.noise = 0.0;
    EXPECT_THROW(lime(linear(beta, 0.0), x0, scale, bad), ConfigurationError);
}

// ---------------------------------------------------------------------------
// LIME on an evaluator

TEST(LimeEvaluator, PersistenceModelAttributesToLastLevel) {
    const auto& t = tiny();
    const auto& L = t.layout;
    const auto ev = fresh(models::Architecture::mlp);
    LimeConfig cfg;
    cfg.n_perturb = 800;
    const std::size_t point = 1;
    const auto h = lime_attributions(ev, t.test[4], point, L.k() - 1, train_std(), cfg);
    EXPECT_EQ(static_cast<std::size_t>(h.coef.rows()), L.V());
    EXPECT_EQ(static_cast<std::size_t>(h.coef.cols()), L.w() + L.k());
    EXPECT_GT(h.r2, 0.999);
    const auto row = static_cast<Eigen::Index>(L.level_cols[point]), col = static_cast<Eigen::Index>(L.w() - 1);
    EXPECT_NEAR(h.coef(row, col), 1.0, 0.02);
    Mat rest = h.coef;
    rest(row, col) = 0.0;
    EXPECT_LT(rest.cwiseAbs().maxCoeff(), 0.02);
    // forecast water levels are not inputs
    for (std::size_t n = 0; n < L.N(); ++n)
        EXPECT_EQ(h.coef.row(static_cast<Eigen::Index>(L.level_cols[n])).rightCols(static_cast<Eigen::Index>(L.k())).cwiseAbs().sum(), 0.0);
    EXPECT_NEAR(h.prediction_ft, t.test[4].past(col, row), 1e-9);
    EXPECT_THROW(lime_attributions(ev, t.test[4], L.N(), 0, train_std(), cfg), ConfigurationError);
}

TEST(Attention, RowsSumToOneAndNeedGtn) {
    const auto& t = tiny();
    const auto ev = fresh(models::Architecture::gtn_lite);
    const auto a = attention_map(ev, fidlar::testing::ptrs(t.test, 6));
    EXPECT_EQ(a.samples, 6u);
    EXPECT_EQ(static_cast<std::size_t>(a.scores.rows()), t.layout.V());
    EXPECT_LT((a.scores.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_GE(a.scores.minCoeff(), 0.0);
    EXPECT_THROW(attention_map(fresh(models::Architecture::rnn), t.test[0]), ContractViolation);
}

TEST(Attention, WithoutRainZeroesRainOnly) {
    const auto& t = tiny();
    const auto& L = t.layout;
    const auto dry = without_rain(t.test[0], L);
    for (std::size_t v = 0; v < L.V(); ++v) {
        const auto c = static_cast<Eigen::Index>(v);
        if (L.specs[v].role == ts::Role::rain)
            EXPECT_EQ(dry.past.col(c).cwiseAbs().sum(), 0.0);
        else
            EXPECT_EQ(dry.past.col(c), t.test[0].past.col(c));
    }
    EXPECT_EQ(dry.future_controls, t.test[0].future_controls);
}

TEST(Findings, TideAttentionComparesTidalPointRows) {
    const auto& L = tiny().layout;
    const auto topo = hydro::default_topology();
    AttentionMap a;
    a.scores = Mat::Constant(static_cast<Eigen::Index>(L.V()), static_cast<Eigen::Index>(L.V()), 1.0 / static_cast<double>(L.V()));
    const auto s26 = static_cast<Eigen::Index>(topo.index_of("S26"));
    const auto tide = static_cast<Eigen::Index>(tide_column(L));
    a.scores(s26, tide) += 0.05;
    EXPECT_EQ(tide_attention_finding(a, L, topo).verdict, Verdict::holds);
    a.scores(s26, tide) -= 0.1;
    EXPECT_EQ(tide_attention_finding(a, L, topo).verdict, Verdict::fails);
    // rows of protected points do not count
    a.scores(0, tide) += 1.0;
    EXPECT_EQ(tide_attention_finding(a, L, topo).verdict, Verdict::fails);
}

TEST(Findings, RegimesPickExtremeTides) {
    const auto& t = tiny();
    const auto& L = t.layout;
    const auto tc = static_cast<Eigen::Index>(tide_column(L));
    const auto last = static_cast<Eigen::Index>(L.w() - 1);
    std::vector<ts::WindowSample> s(4, t.test[0]);
    const double level[] = {1.0, 3.0, 2.0, 2.0}, slope[] = {0.0, 0.0, 0.4, -0.4};
    for (int i = 0; i < 4; ++i) {
        s[static_cast<std::size_t>(i)].past(last, tc) = level[i];
        s[static_cast<std::size_t>(i)].past(last - 1, tc) = level[i] - slope[i];
    }
    EXPECT_EQ(pick_regime(s, L, Regime::low_tide), 0u);
    EXPECT_EQ(pick_regime(s, L, Regime::high_tide), 1u);
    EXPECT_EQ(pick_regime(s, L, Regime::rising), 2u);
    EXPECT_EQ(pick_regime(s, L, Regime::falling), 3u);
}

TEST(Findings, LowFidelityMapsAssertNothing) {
    const auto& t = tiny();
    const auto& L = t.layout;
    std::vector<AttributionHeatmap> maps(2, blank_map(L, 0.3));
    maps[0].importance.setOnes();
    const std::vector<const ts::WindowSample*> s{&t.test[0], &t.test[1]};
    const auto f = attribution_findings(maps, s, L, 0.6);
    ASSERT_EQ(f.size(), 3u);
    for (const auto& x : f) EXPECT_EQ(x.verdict, Verdict::low_fidelity) << x.name;
}

TEST(Findings, AttributionDirections) {
    const auto& t = tiny();
    const auto& L = t.layout;
    const auto w = static_cast<Eigen::Index>(L.w()), k = static_cast<Eigen::Index>(L.k());
    auto h = blank_map(L, 0.9);
    // forecast columns strong, recent past above old past
    h.importance.rightCols(k).setConstant(1.0);
    h.importance.middleCols(w - k, k).setConstant(0.2);
    // gate importance only at the lowest forecast tide hour
    ts::WindowSample s = t.test[0];
    std::size_t tide_c = 0;
    for (std::size_t c = 0; c < L.C(); ++c)
        if (L.specs[L.cov_cols[c]].role == ts::Role::tide) tide_c = c;
    for (Eigen::Index j = 0; j < k; ++j) s.future_cov(j, static_cast<Eigen::Index>(tide_c)) = static_cast<double>(j);
    for (std::size_t q = 0; q < L.S(); ++q)
        if (L.specs[L.ctrl_cols[q]].role == ts::Role::gate) {
            h.importance.row(static_cast<Eigen::Index>(L.ctrl_cols[q])).rightCols(k).setZero();
            h.importance(static_cast<Eigen::Index>(L.ctrl_cols[q]), w) = 3.0;
        }
    const auto f = attribution_findings({h}, {&s}, L, 0.6);
    for (const auto& x : f) EXPECT_EQ(x.verdict, Verdict::holds) << x.name << " " << x.lhs << " vs " << x.rhs;

    auto flat = blank_map(L, 0.9);
    flat.importance.setOnes();
    const auto g = attribution_findings({flat}, {&s}, L, 0.6);
    for (const auto& x : g) EXPECT_EQ(x.verdict, Verdict::fails) << x.name;
}

// ---------------------------------------------------------------------------
// Report

TEST(ExplainReport, FourRegimesAndFindingsOnDisk) {
    const auto& t = tiny();
    auto ev = fresh(models::Architecture::gtn_lite);
    ev.freeze();
    ExplainConfig cfg;
    cfg.attention_samples = 8;
    cfg.lime.n_perturb = 300;
    const auto r = explain_report(ev, t.test, train_std(), t.dcfg.topology, cfg);
    ASSERT_TRUE(r.attention.has_value());
    EXPECT_EQ(r.regimes.size(), 4u);
    EXPECT_EQ(r.findings.size(), 4u);
    EXPECT_EQ(r.point_name, "S1");
    EXPECT_NO_THROW(r.finding("lag_decay"));
    EXPECT_THROW(r.finding("nothing"), ConfigurationError);

    fidlar::testing::TempDir dir("fidlar_explain");
    write_explain(dir.path, r);
    for (const char* f : {"explain.json", "attention.svg", "lime_low_tide.svg", "lime_high_tide.svg", "lime_rising.svg", "lime_falling.svg"})
        EXPECT_TRUE(std::filesystem::exists(dir.path / f)) << f;
    const auto j = r.to_json();
    EXPECT_EQ(j.at("regimes").size(), 4u);
    EXPECT_EQ(j.at("regimes")[0].at("heatmap").at("columns").size(), t.layout.w() + t.layout.k());

    const auto back = explain_config_from_json(explain_config_to_json(cfg));
    EXPECT_EQ(back.lime.n_perturb, 300u);
    EXPECT_EQ(back.attention_samples, 8u);
    EXPECT_THROW(ExplainConfig{.step = t.layout.k() + 1}.step_index(t.layout.k()), ConfigurationError);
}
