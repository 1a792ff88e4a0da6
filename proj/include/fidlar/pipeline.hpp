#pragma once

#include "baselines/ga.hpp"
#include "bench/benchmark.hpp"
#include "bench/report.hpp"
#include "hydro/config.hpp"
#include "hydro/dataset.hpp"
#include "models/manager.hpp"
#include "models/train_evaluator.hpp"
#include "thresholds.hpp"

namespace fidlar {

using json = nlohmann::json;

/**
 * Everything that defines an end-to-end run: data generation, windowing,
 * both models, losses and the baselines. One JSON file with optional
 * sections "dataset" (the hydro config), "windows", "evaluator", "manager",
 * "loss", "ga" and "benchmark".
 */
struct PipelineConfig {
    hydro::DatasetConfig dataset;
    std::size_t episodes = 20;
    std::uint64_t seed = 42;

    ts::WindowConfig window{72, 24, 4}; ///< stride applies to training windows
    std::size_t eval_stride = 6;

    models::NetConfig evaluator_net{models::Architecture::gtn_lite};
    models::TrainConfig evaluator_train{.epochs = 20, .patience = 100};
    std::uint64_t evaluator_init_seed = 1;

    models::NetConfig manager_net{models::Architecture::gtn_lite};
    models::ManagerTrainConfig manager_train{.epochs = 8, .patience = 100};
    std::uint64_t manager_init_seed = 3;
    double manager_initial_bias = -1.0;
    std::size_t rollout_rounds = 2;

    double flood_level = 3.5;
    double waste_margin = 1.5;
    double tidal_waste = 0.0;
    models::LossWeights weights;

    baselines::GAConfig ga;
    std::size_t ga_replan = 6; ///< hours between GA replans in closed loop
    std::size_t bench_start = 71;
    std::size_t timing_windows = 8; ///< test windows per timing run
    std::size_t timing_runs = 5;

    Thresholds thresholds() const {
        return default_thresholds(dataset.topology, flood_level, waste_margin, tidal_waste);
    }

    void validate() const {
        dataset.validate();
        window.validate();
        evaluator_net.validate();
        evaluator_train.validate();
        manager_net.validate();
        manager_train.validate();
        weights.validate();
        ga.validate();
        if (eval_stride == 0) throw ConfigurationError("evaluation stride must be positive");
        if (ga_replan == 0 || ga_replan > window.k) throw ConfigurationError("GA replan interval must lie in [1, k]");
        if (bench_start + 1 < window.w) throw ConfigurationError("benchmark start leaves fewer than w rows of history");
        if (bench_start + 1 >= dataset.episode_hours) throw ConfigurationError("benchmark start beyond the episode");
        if (timing_windows == 0 || timing_runs == 0) throw ConfigurationError("timing needs at least one window and one run");
        (void)thresholds();
    }
};

inline json pipeline_config_to_json(const PipelineConfig& c) {
    return {{"dataset", hydro::dataset_config_to_json(c.dataset)},
            {"episodes", c.episodes},
            {"seed", c.seed},
            {"windows", {{"w", c.window.w}, {"k", c.window.k}, {"train_stride", c.window.stride}, {"eval_stride", c.eval_stride}}},
            {"evaluator",
             {{"network", models::net_config_to_json(c.evaluator_net)},
              {"train", models::train_config_to_json(c.evaluator_train)},
              {"init_seed", c.evaluator_init_seed}}},
            {"manager",
             {{"network", models::net_config_to_json(c.manager_net)},
              {"train", models::manager_train_config_to_json(c.manager_train)},
              {"init_seed", c.manager_init_seed},
              {"initial_bias", c.manager_initial_bias},
              {"rollout_rounds", c.rollout_rounds}}},
            {"loss",
             {{"flood_level", c.flood_level}, {"waste_margin", c.waste_margin}, {"tidal_waste", c.tidal_waste},
              {"lambda_flood", c.weights.flood}, {"lambda_waste", c.weights.waste}}},
            {"ga", baselines::ga_config_to_json(c.ga)},
            {"benchmark",
             {{"ga_replan", c.ga_replan}, {"start_row", c.bench_start}, {"timing_windows", c.timing_windows},
              {"timing_runs", c.timing_runs}}}};
}

inline PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    try {
        hydro::detail::check_keys(j, {"dataset", "episodes", "seed", "windows", "evaluator", "manager", "loss", "ga", "benchmark"}, "config");
        if (j.contains("dataset")) c.dataset = hydro::dataset_config_from_json(j.at("dataset"));
        c.episodes = j.value("episodes", c.episodes);
        c.seed = j.value("seed", c.seed);
        if (j.contains("windows")) {
            const auto& w = j.at("windows");
            hydro::detail::check_keys(w, {"w", "k", "train_stride", "eval_stride"}, "windows");
            c.window.w = w.value("w", c.window.w);
            c.window.k = w.value("k", c.window.k);
            c.window.stride = w.value("train_stride", c.window.stride);
            c.eval_stride = w.value("eval_stride", c.eval_stride);
        }
        if (j.contains("evaluator")) {
            const auto& e = j.at("evaluator");
            hydro::detail::check_keys(e, {"network", "train", "init_seed"}, "evaluator");
            if (e.contains("network")) c.evaluator_net = models::net_config_from_json(e.at("network"));
            if (e.contains("train")) c.evaluator_train = models::train_config_from_json(e.at("train"), c.evaluator_train);
            c.evaluator_init_seed = e.value("init_seed", c.evaluator_init_seed);
        }
        if (j.contains("manager")) {
            const auto& m = j.at("manager");
            hydro::detail::check_keys(m, {"network", "train", "init_seed", "initial_bias", "rollout_rounds"}, "manager");
            if (m.contains("network")) c.manager_net = models::net_config_from_json(m.at("network"));
            if (m.contains("train")) c.manager_train = models::manager_train_config_from_json(m.at("train"), c.manager_train);
            c.manager_init_seed = m.value("init_seed", c.manager_init_seed);
            c.manager_initial_bias = m.value("initial_bias", c.manager_initial_bias);
            c.rollout_rounds = m.value("rollout_rounds", c.rollout_rounds);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            hydro::detail::check_keys(l, {"flood_level", "waste_margin", "tidal_waste", "lambda_flood", "lambda_waste"}, "loss");
            c.flood_level = l.value("flood_level", c.flood_level);
            c.waste_margin = l.value("waste_margin", c.waste_margin);
            c.tidal_waste = l.value("tidal_waste", c.tidal_waste);
            c.weights.flood = l.value("lambda_flood", c.weights.flood);
            c.weights.waste = l.value("lambda_waste", c.weights.waste);
        }
        if (j.contains("ga")) c.ga = baselines::ga_config_from_json(j.at("ga"), c.ga);
        if (j.contains("benchmark")) {
            const auto& b = j.at("benchmark");
            hydro::detail::check_keys(b, {"ga_replan", "start_row", "timing_windows", "timing_runs"}, "benchmark");
            c.ga_replan = b.value("ga_replan", c.ga_replan);
            c.bench_start = b.value("start_row", c.bench_start);
            c.timing_windows = b.value("timing_windows", c.timing_windows);
            c.timing_runs = b.value("timing_runs", c.timing_runs);
        }
    } catch (const json::exception& e) {
        throw ConfigurationError(std::string("bad config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Simulated episodes plus their windows and the normalization fitted on training frames.
struct Prepared {
    hydro::Dataset data;
    std::vector<ts::WindowSample> train, val, test;
    ts::NormParams norm;
    models::ModelLayout layout;
};

inline Prepared prepare(const PipelineConfig& cfg) {
    cfg.validate();
    Prepared p;
    p.data = hydro::generate_dataset(cfg.dataset, cfg.episodes, cfg.seed);
    const auto trf = hydro::frames(p.data.train);
    const ts::WindowConfig eval_window{cfg.window.w, cfg.window.k, cfg.eval_stride};
    p.train = ts::make_windows(trf, cfg.window);
    p.val = ts::make_windows(hydro::frames(p.data.val), eval_window);
    p.test = ts::make_windows(hydro::frames(p.data.test), eval_window);
    p.norm = ts::fit_normalization(trf);
    p.layout = models::make_layout(trf.front().specs(), cfg.dataset.topology, cfg.window);
    return p;
}

inline models::EvaluatorModel fit_evaluator(const PipelineConfig& cfg, const Prepared& p, models::NetConfig net,
                                            models::EvaluatorHistory* history = nullptr) {
    auto ev = models::EvaluatorModel::build(net, p.layout, p.norm, cfg.evaluator_init_seed);
    auto h = models::train_evaluator(ev, p.train, p.val, cfg.evaluator_train);
    ev.meta()["history"] = h.to_json();
    if (history) *history = std::move(h);
    return ev;
}

/**
 * Runs the manager closed-loop through the simulator on `episodes` and cuts
 * training windows from the result, so the manager also trains on states
 * its own decisions lead to. Rows before `start` come from the episode.
 */
inline std::vector<ts::WindowSample> rollout_windows(const models::ManagerModel& m, const std::vector<hydro::SimRun>& episodes,
                                                     const hydro::DatasetConfig& dcfg, std::size_t start,
                                                     const ts::WindowConfig& window) {
    std::vector<ts::SeriesFrame> frames;
    for (const auto& epi : episodes) {
        const std::size_t hours = static_cast<std::size_t>(epi.frame.rows()) - 1 - start;
        const auto ctl = bench::planner_controller(m.layout(), epi, start, bench::manager_planner(m));
        const auto run = bench::continue_episode(dcfg.topology, dcfg.forcing.rain, epi, start, hours, ctl, dcfg.horizon);
        Mat v(static_cast<Eigen::Index>(start) + run.frame.values().rows(), epi.frame.values().cols());
        v << epi.frame.values().topRows(static_cast<Eigen::Index>(start)), run.frame.values();
        frames.emplace_back(epi.frame.specs(), epi.frame.start_time(), std::move(v));
    }
    return ts::make_windows(frames, window);
}

/**
 * Trains a manager through the frozen evaluator, then for each rollout
 * round adds windows from closed-loop runs of the current manager on the
 * training episodes and trains again on the enlarged set.
 */
inline std::vector<models::ManagerHistory> fit_manager(models::ManagerModel& m, const models::EvaluatorModel& ev,
                                                       const PipelineConfig& cfg, const Prepared& p) {
    const auto th = cfg.thresholds();
    std::vector<models::ManagerHistory> out;
    auto train = p.train;
    out.push_back(models::train_manager(m, ev, train, p.val, th, cfg.weights, cfg.manager_train));
    for (std::size_t r = 0; r < cfg.rollout_rounds; ++r) {
        auto extra = rollout_windows(m, p.data.train, cfg.dataset, cfg.bench_start, cfg.window);
        train.insert(train.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
        out.push_back(models::train_manager(m, ev, train, p.val, th, cfg.weights, cfg.manager_train));
    }
    json hist = json::array();
    for (const auto& h : out) hist.push_back(h.to_json());
    m.meta()["history"] = hist;
    return out;
}

inline models::ManagerModel new_manager(const PipelineConfig& cfg, const Prepared& p, models::NetConfig net) {
    return models::ManagerModel::build(net, p.layout, p.norm, cfg.manager_init_seed, cfg.manager_initial_bias);
}

struct NamedEvaluator {
    std::string name;
    models::EvaluatorModel model;
    double train_seconds = 0.0;
};

struct NamedManager {
    std::string name;
    models::ManagerModel model;
};

/**
 * Scores the rule, the GA (searching through `referee`) and each manager on
 * the test episodes through the simulator, plus evaluator accuracy on the
 * test windows and per-window planning time. Closed loop replans managers
 * hourly and the GA every `ga_replan` hours; open loop plans once per window.
 */
inline bench::BenchmarkReport run_benchmark(const PipelineConfig& cfg, const Prepared& p, const models::EvaluatorModel& referee,
                                            const std::vector<NamedManager>& managers,
                                            const std::vector<NamedEvaluator>& evaluators, bool open_loop,
                                            bool with_ga = true) {
    if (!referee.frozen()) throw ContractViolation("benchmark referee evaluator must be frozen");
    const auto th = cfg.thresholds();
    const auto& L = p.layout;
    bench::BenchmarkReport r;
    r.mode = open_loop ? "open" : "closed";
    r.seed = cfg.seed;
    r.fingerprint = bench::fingerprint(pipeline_config_to_json(cfg));
    r.thresholds = th;
    for (auto c : L.level_cols) r.points.push_back(L.specs[c].station);

    const auto ga = bench::ga_planner(referee, cfg.dataset.topology, cfg.dataset.policy, th, cfg.weights, cfg.ga);
    std::vector<bench::ControllerSpec> specs{bench::rule_spec(cfg.dataset.policy)};
    if (with_ga) specs.push_back(bench::planner_spec("ga", L, ga, open_loop ? 0 : cfg.ga_replan));
    for (const auto& m : managers) {
        models::check_compatible(m.model, referee);
        specs.push_back(bench::planner_spec(m.name, L, bench::manager_planner(m.model), open_loop ? 0 : 1));
    }
    bench::BenchmarkSettings s;
    s.open_loop = open_loop;
    s.start = cfg.bench_start;
    s.stride = cfg.eval_stride;
    s.horizon = cfg.dataset.horizon;
    r.controllers = bench::run_controllers(specs, p.data.test, cfg.dataset, L, th, s);

    {
        const auto t0 = std::chrono::steady_clock::now();
        const auto acc = models::persistence_accuracy(p.test, L);
        r.accuracy.push_back({"persistence", acc, 0.0, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    }
    for (const auto& e : evaluators) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto acc = models::evaluate_accuracy(e.model, p.test);
        r.accuracy.push_back({e.name, acc, e.train_seconds, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    }

    std::vector<const ts::WindowSample*> tw;
    for (std::size_t i = 0; i < std::min(cfg.timing_windows, p.test.size()); ++i) tw.push_back(&p.test[i]);
    if (!tw.empty()) {
        const Mat closed = Mat::Zero(static_cast<Eigen::Index>(L.k()), static_cast<Eigen::Index>(L.S()));
        r.timing.push_back(bench::time_planner("noop", [closed](const Mat&, const Mat&) { return closed; }, tw, cfg.timing_runs));
        if (with_ga) r.timing.push_back(bench::time_planner("ga", ga, tw, cfg.timing_runs));
        for (const auto& m : managers) r.timing.push_back(bench::time_planner(m.name, bench::manager_planner(m.model), tw, cfg.timing_runs));
    }
    return r;
}

/// GA and manager plans for one test window, both scored by the referee evaluator.
struct ParityRow {
    std::size_t window = 0;
    double ga = 0.0;
    double manager = 0.0;
    double ga_seconds = 0.0;
    double manager_seconds = 0.0;
};

/**
 * Open-loop comparison on every `every`-th test window: the GA searches
 * through `referee` at the configured budget and the manager plans once.
 */
inline std::vector<ParityRow> ga_parity(const PipelineConfig& cfg, const Prepared& p, const models::EvaluatorModel& referee,
                                        const models::ManagerModel& m, std::size_t every = 1) {
    if (!referee.frozen()) throw ContractViolation("parity referee evaluator must be frozen");
    if (every == 0) throw ConfigurationError("parity window step must be positive");
    models::check_compatible(m, referee);
    const auto th = cfg.thresholds();
    const auto ga = bench::ga_planner(referee, cfg.dataset.topology, cfg.dataset.policy, th, cfg.weights, cfg.ga);
    const auto mp = bench::manager_planner(m);
    const auto score = [&](const ts::WindowSample& s, const Mat& u) {
        return models::combined_loss(referee.predict(s.past, s.future_cov, u).levels, th, cfg.weights);
    };
    std::vector<ParityRow> out;
    for (std::size_t i = 0; i < p.test.size(); i += every) {
        const auto& s = p.test[i];
        ParityRow r;
        r.window = i;
        auto t0 = std::chrono::steady_clock::now();
        const Mat ug = ga(s.past, s.future_cov);
        r.ga_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        t0 = std::chrono::steady_clock::now();
        const Mat um = mp(s.past, s.future_cov);
        r.manager_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.ga = score(s, ug);
        r.manager = score(s, um);
        out.push_back(r);
    }
    return out;
}

inline std::string parity_csv(const std::vector<ParityRow>& rows) {
    std::ostringstream os;
    os << "window,ga_loss,manager_loss,ga_seconds,manager_seconds\n";
    os.precision(10);
    for (const auto& r : rows) os << r.window << ',' << r.ga << ',' << r.manager << ',' << r.ga_seconds << ',' << r.manager_seconds << '\n';
    return os.str();
}

} // namespace fidlar
