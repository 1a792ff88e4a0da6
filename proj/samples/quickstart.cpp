// Smallest end-to-end run: simulate a few short episodes, fit an evaluator,
// train a manager through it and compare one plan against the rule.

#include <fidlar/baselines/rule_plan.hpp>
#include <fidlar/pipeline.hpp>

#include <cstdio>

using namespace fidlar;

int main() {
    PipelineConfig cfg;
    cfg.dataset.episode_hours = 240;
    cfg.episodes = 5;
    cfg.window = {24, 8, 4};
    cfg.eval_stride = 8;
    cfg.bench_start = 23;
    cfg.evaluator_train.epochs = 3;
    cfg.manager_train.epochs = 2;
    cfg.rollout_rounds = 0;

    const auto p = prepare(cfg);
    std::printf("windows: %zu train, %zu val, %zu test\n", p.train.size(), p.val.size(), p.test.size());

    models::EvaluatorHistory h;
    auto ev = fit_evaluator(cfg, p, cfg.evaluator_net, &h);
    ev.freeze();
    std::printf("evaluator val MAE %.3f ft (persistence %.3f ft)\n", h.best_val_mae, h.persistence_mae);

    auto m = new_manager(cfg, p, cfg.manager_net);
    fit_manager(m, ev, cfg, p);

    const auto& s = p.test.front();
    const auto th = cfg.thresholds();
    const Mat plan = m.suggest_schedule(s.past, s.future_cov);
    const auto rule = baselines::rule_plans(ev, cfg.dataset.topology, cfg.dataset.policy, std::vector<const ts::WindowSample*>{&s});
    const auto loss = [&](const Mat& u) { return models::combined_loss(ev.predict(s.past, s.future_cov, u).levels, th, cfg.weights); };
    std::printf("first test window: manager loss %.4f, rule loss %.4f\n", loss(plan), loss(rule[0]));
    std::printf("manager first hour:");
    for (Eigen::Index c = 0; c < plan.cols(); ++c) std::printf(" %.2f", plan(0, c));
    std::printf("\n");
}
