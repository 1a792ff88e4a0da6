// fidlar: data generation, training, benchmarking, explanations and the control service.

#include <fidlar/explain/report.hpp>
#include <fidlar/pipeline.hpp>
#include <fidlar/service/service.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace fidlar;

namespace {

struct Common {
    std::string config;
    std::string dir = "artifacts";
    long long seed = -1;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "pipeline config JSON (default: <dir>/config.json if present)");
    app->add_option("--out,--artifacts", c.dir, "artifacts directory")->capture_default_str();
    app->add_option("--seed", c.seed, "dataset seed, overrides the config");
}

void log(const char* fmt, auto... args) {
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Explicit --config, else the config stored with the artifacts, else defaults.
PipelineConfig resolve(const Common& c) {
    json j = json::object();
    if (!c.config.empty()) j = hydro::load_json(c.config);
    else if (fs::exists(fs::path(c.dir) / "config.json")) j = hydro::load_json((fs::path(c.dir) / "config.json").string());
    if (c.seed >= 0) j["seed"] = c.seed;
    return pipeline_config_from_json(j);
}

void write_json(const fs::path& path, const json& j) {
    bench::write_text(path, j.dump(2) + "\n");
}

/// Keeps <dir>/config.json in step with the artifacts; refuses to mix runs.
void pin_config(const fs::path& dir, const PipelineConfig& cfg) {
    fs::create_directories(dir);
    const json j = pipeline_config_to_json(cfg);
    const auto path = dir / "config.json";
    if (fs::exists(path) && pipeline_config_to_json(pipeline_config_from_json(hydro::load_json(path.string()))) != j)
        throw ConfigurationError(path.string() + " holds a different config; use a fresh --out directory");
    write_json(path, j);
}

models::EvaluatorModel load_referee(const fs::path& dir) {
    auto ev = models::EvaluatorModel::load((dir / "evaluator").string());
    ev.freeze();
    return ev;
}

std::string evaluator_path(const fs::path& dir, models::Architecture a) {
    return (dir / ("evaluator_" + std::string(models::to_string(a)))).string();
}

// -- subcommands

void cmd_generate(const PipelineConfig& cfg, const fs::path& dir) {
    pin_config(dir, cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = hydro::generate_dataset(cfg.dataset, cfg.episodes, cfg.seed);
    const auto dump = [&](const std::vector<hydro::SimRun>& runs, const std::string& split) {
        fs::create_directories(dir / "data");
        for (std::size_t i = 0; i < runs.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "%s_%02zu.csv", split.c_str(), i);
            ts::write_csv((dir / "data" / name).string(), runs[i].frame);
        }
    };
    dump(data.train, "train");
    dump(data.val, "val");
    dump(data.test, "test");
    log("generated %zu/%zu/%zu episodes of %zu h in %.1fs -> %s", data.train.size(), data.val.size(), data.test.size(),
        cfg.dataset.episode_hours, since(t0), (dir / "data").c_str());
}

void cmd_train_evaluator(const PipelineConfig& cfg, const fs::path& dir, const std::string& arch) {
    pin_config(dir, cfg);
    const auto p = prepare(cfg);
    auto net = cfg.evaluator_net;
    net.arch = arch.empty() ? cfg.evaluator_net.arch : models::parse_architecture(arch);
    const auto t0 = std::chrono::steady_clock::now();
    models::EvaluatorHistory h;
    auto ev = fit_evaluator(cfg, p, net, &h);
    const double secs = since(t0);
    ev.meta()["train_seconds"] = secs;
    ev.meta()["variable_std"] = explain::variable_std(hydro::frames(p.data.train));
    ev.save(evaluator_path(dir, net.arch));
    if (net.arch == cfg.evaluator_net.arch) ev.save((dir / "evaluator").string());
    log("evaluator %s: best val MAE %.4f ft at epoch %zu (persistence %.4f), %.0fs", std::string(models::to_string(net.arch)).c_str(),
        h.best_val_mae, h.best_epoch, h.persistence_mae, secs);
}

void export_session(const PipelineConfig& cfg, const Prepared& p, const fs::path& dir) {
    auto ev = load_referee(dir);
    std::optional<models::ManagerModel> mgr;
    if (fs::exists(dir / "manager.json")) mgr = models::ManagerModel::load((dir / "manager").string());
    std::vector<double> sd = ev.meta().contains("variable_std") ? ev.meta()["variable_std"].get<std::vector<double>>()
                                                                 : explain::variable_std(hydro::frames(p.data.train));
    explain::ExplainConfig ex;
    ex.lime.n_perturb = 2000;
    service::Session s{ev, mgr, p.data.test.front().frame, cfg.thresholds(), cfg.weights, sd, ex, cfg.bench_start + 1 - cfg.window.w};
    service::save_session(dir, s);
}

void cmd_train_manager(const PipelineConfig& cfg, const fs::path& dir, const std::string& arch) {
    pin_config(dir, cfg);
    const auto p = prepare(cfg);
    const auto ev = load_referee(dir);
    auto net = cfg.manager_net;
    if (!arch.empty()) net.arch = models::parse_architecture(arch);
    auto m = new_manager(cfg, p, net);
    const auto t0 = std::chrono::steady_clock::now();
    const auto hs = fit_manager(m, ev, cfg, p);
    m.meta()["train_seconds"] = since(t0);
    m.save((dir / ("manager_" + std::string(models::to_string(net.arch)))).string());
    if (net.arch == cfg.manager_net.arch) m.save((dir / "manager").string());
    log("manager %s: %zu rounds, best val loss %.4f, %.0fs", std::string(models::to_string(net.arch)).c_str(), hs.size(),
        hs.back().best_val_loss, since(t0));
    export_session(cfg, p, dir);
}

void cmd_benchmark(const PipelineConfig& cfg, const fs::path& dir, bool open_loop, bool with_ga, std::size_t parity_every) {
    const auto p = prepare(cfg);
    const auto ev = load_referee(dir);
    std::vector<NamedManager> managers;
    for (auto a : {models::Architecture::mlp, models::Architecture::rnn, models::Architecture::gtn_lite}) {
        const auto path = dir / ("manager_" + std::string(models::to_string(a)));
        if (fs::exists(path.string() + ".json")) managers.push_back({"manager_" + std::string(models::to_string(a)), models::ManagerModel::load(path.string())});
    }
    std::vector<NamedEvaluator> evaluators;
    for (auto a : {models::Architecture::mlp, models::Architecture::rnn, models::Architecture::gtn_lite}) {
        const auto path = evaluator_path(dir, a);
        if (!fs::exists(path + ".json")) continue;
        auto e = models::EvaluatorModel::load(path);
        const double secs = e.meta().value("train_seconds", 0.0);
        evaluators.push_back({"evaluator_" + std::string(models::to_string(a)), std::move(e), secs});
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_benchmark(cfg, p, ev, managers, evaluators, open_loop, with_ga);
    const auto out = dir / (open_loop ? "bench_open" : "bench_closed");
    bench::write_report(out, r);
    for (const auto& c : r.controllers)
        log("%-18s over_time %4lld over_area %8.3f under_time %4lld under_area %8.3f", c.name.c_str(), static_cast<long long>(c.total.over_time),
            c.total.over_area, static_cast<long long>(c.total.under_time), c.total.under_area);
    for (const auto& a : r.accuracy) log("%-18s test MAE %.4f ft RMSE %.4f ft", a.name.c_str(), a.test.mae, a.test.rmse);
    for (const auto& t : r.timing) log("%-18s %.6f s per window", t.name.c_str(), t.median_seconds);
    if (parity_every > 0 && fs::exists(dir / "manager.json")) {
        const auto rows = ga_parity(cfg, p, ev, models::ManagerModel::load((dir / "manager").string()), parity_every);
        bench::write_text(out / "ga_parity.csv", parity_csv(rows));
        log("GA parity on %zu windows -> %s", rows.size(), (out / "ga_parity.csv").c_str());
    }
    log("benchmark (%s loop) in %.0fs -> %s", r.mode.c_str(), since(t0), out.c_str());
}

void cmd_explain(const PipelineConfig& cfg, const fs::path& dir, explain::ExplainConfig ex) {
    const auto p = prepare(cfg);
    const auto ev = load_referee(dir);
    const auto sd = ev.meta().contains("variable_std") ? ev.meta()["variable_std"].get<std::vector<double>>()
                                                        : explain::variable_std(hydro::frames(p.data.train));
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = explain::explain_report(ev, p.test, sd, cfg.dataset.topology, ex);
    explain::write_explain(dir / "explain", r);
    for (const auto& g : r.regimes) log("%-10s window %4zu R2 %.3f", std::string(explain::to_string(g.regime)).c_str(), g.sample, g.heatmap.r2);
    for (const auto& f : r.findings)
        log("%-28s %-12s %.5f vs %.5f", f.name.c_str(), std::string(explain::to_string(f.verdict)).c_str(), f.lhs, f.rhs);
    log("explain in %.0fs -> %s", since(t0), (dir / "explain").c_str());
}

service::ControlService* g_service = nullptr;

int cmd_serve(const fs::path& dir, const std::string& host, int port, const std::string& static_dir, std::size_t cursor) {
    service::ControlService svc;
    if (fs::exists(dir / "session.json")) {
        svc.set_session(service::load_session(dir, cursor));
        log("session loaded from %s", dir.c_str());
    } else {
        log("no session in %s; POST /session to load one", dir.c_str());
    }
    if (!static_dir.empty() && !svc.mount_static(static_dir)) throw ConfigurationError("cannot serve static files from " + static_dir);
    if (!svc.bind(host, port)) throw ConfigurationError("cannot bind " + host + ":" + std::to_string(port));
    g_service = &svc;
    std::signal(SIGINT, [](int) { g_service->stop(); });
    std::signal(SIGTERM, [](int) { g_service->stop(); });
    log("listening on http://%s:%d", host.c_str(), port);
    svc.listen_after_bind();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fidlar: learned flood control planning"};
    app.require_subcommand(1);

    Common common;
    std::string arch;
    bool open_loop = false, no_ga = false;
    std::size_t parity_every = 0;
    explain::ExplainConfig ex;
    ex.lime.n_perturb = 2000;
    std::string host = "127.0.0.1", static_dir;
    int port = 8080;
    std::size_t cursor = 0;
    std::string config_out;

    auto* c_config = app.add_subcommand("config", "print the default pipeline config");
    c_config->add_option("--out", config_out, "write to a file instead of stdout");

    auto* c_gen = app.add_subcommand("generate", "simulate the episodes and write them as CSV");
    add_common(c_gen, common);

    auto* c_ev = app.add_subcommand("train-evaluator", "train an evaluator on the simulated data");
    add_common(c_ev, common);
    c_ev->add_option("--arch", arch, "mlp, rnn or gtn_lite (default: config)");

    auto* c_mg = app.add_subcommand("train-manager", "train a manager through the frozen evaluator");
    add_common(c_mg, common);
    c_mg->add_option("--arch", arch, "mlp, rnn or gtn_lite (default: config)");

    auto* c_bench = app.add_subcommand("benchmark", "score rule, GA and managers on the test episodes");
    add_common(c_bench, common);
    c_bench->add_flag("--open-loop", open_loop, "plan once per window instead of replanning");
    c_bench->add_flag("--no-ga", no_ga, "skip the GA baseline");
    c_bench->add_option("--parity-every", parity_every, "also compare GA and manager on every n-th test window (0 = off)");

    auto* c_ex = app.add_subcommand("explain", "attention map, LIME heatmaps and findings");
    add_common(c_ex, common);
    c_ex->add_option("--point", ex.point, "explained level column")->capture_default_str();
    c_ex->add_option("--step", ex.step, "explained horizon step, 1-based; 0 = last")->capture_default_str();
    c_ex->add_option("--lime-samples", ex.lime.n_perturb, "LIME perturbations per heatmap")->capture_default_str();

    auto* c_train = app.add_subcommand("train", "train the rnn and configured evaluators, then the manager");
    add_common(c_train, common);

    auto* c_all = app.add_subcommand("all", "generate, train both evaluators and the manager, benchmark and explain");
    add_common(c_all, common);

    auto* c_serve = app.add_subcommand("serve", "run the HTTP control service");
    c_serve->add_option("--artifacts", common.dir, "artifacts directory with a session")->capture_default_str();
    c_serve->add_option("--host", host)->capture_default_str();
    c_serve->add_option("--port", port)->capture_default_str();
    c_serve->add_option("--static", static_dir, "serve a console bundle from this directory at /");
    c_serve->add_option("--cursor", cursor, "default window cursor")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path dir = common.dir;
        if (c_config->parsed()) {
            const std::string text = pipeline_config_to_json(PipelineConfig{}).dump(2) + "\n";
            if (config_out.empty()) std::cout << text;
            else bench::write_text(config_out, text);
        } else if (c_gen->parsed()) {
            cmd_generate(resolve(common), dir);
        } else if (c_ev->parsed()) {
            cmd_train_evaluator(resolve(common), dir, arch);
        } else if (c_mg->parsed()) {
            cmd_train_manager(resolve(common), dir, arch);
        } else if (c_bench->parsed()) {
            cmd_benchmark(resolve(common), dir, open_loop, !no_ga, parity_every);
        } else if (c_ex->parsed()) {
            ex.lime.validate();
            cmd_explain(resolve(common), dir, ex);
        } else if (c_train->parsed() || c_all->parsed()) {
            const auto cfg = resolve(common);
            if (c_all->parsed()) cmd_generate(cfg, dir);
            if (cfg.evaluator_net.arch != models::Architecture::rnn) cmd_train_evaluator(cfg, dir, "rnn");
            cmd_train_evaluator(cfg, dir, "");
            cmd_train_manager(cfg, dir, "");
            if (c_train->parsed()) return 0;
            cmd_benchmark(cfg, dir, false, true, 0);
            cmd_benchmark(cfg, dir, true, true, 1);
            cmd_explain(cfg, dir, ex);
        } else if (c_serve->parsed()) {
            return cmd_serve(dir, host, port, static_dir, cursor);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
