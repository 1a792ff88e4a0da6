#pragma once

#include "../bench/metrics.hpp"
#include "../explain/report.hpp"
#include "../models/losses.hpp"
#include "../models/manager.hpp"

#include <httplib.h>

#include <filesystem>
#include <mutex>

namespace fidlar::service {

using json = nlohmann::json;

/// One loaded scenario. Immutable once built; the service swaps whole sessions.
struct Session {
    models::EvaluatorModel evaluator;
    std::optional<models::ManagerModel> manager;
    ts::SeriesFrame frame;
    Thresholds thresholds;
    models::LossWeights weights;
    std::vector<double> variable_std;
    explain::ExplainConfig explain;
    std::size_t cursor = 0; ///< default window: row where the past block starts

    std::size_t max_cursor() const {
        const auto& L = evaluator.layout();
        const std::size_t need = L.w() + L.k();
        return frame.rows() >= need ? frame.rows() - need : 0;
    }

    void validate() const {
        const auto& L = evaluator.layout();
        if (!evaluator.frozen()) throw ContractViolation("session evaluator must be frozen");
        if (frame.cols() != L.V()) throw StructuralError("session frame has " + std::to_string(frame.cols()) + " columns, model expects " + std::to_string(L.V()));
        if (frame.rows() < L.w() + L.k()) throw SizingError("session frame shorter than one window");
        if (manager) models::check_compatible(*manager, evaluator);
        thresholds.validate(L.N());
        weights.validate();
        if (variable_std.size() != L.V()) throw StructuralError("session variable std does not match the model");
        if (cursor > max_cursor()) throw ConfigurationError("session cursor out of range");
    }
};

/// Client-facing failure carrying an HTTP status and, for bad input, the offending field.
struct HttpError : std::runtime_error {
    int status;
    std::string field;
    HttpError(int s, const std::string& msg, std::string f = {}) : std::runtime_error(msg), status(s), field(std::move(f)) {}
};

inline json matrix_json(const Mat& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        a.push_back(std::move(row));
    }
    return a;
}

inline std::vector<std::string> names_of(const models::ModelLayout& L, const std::vector<std::size_t>& cols) {
    std::vector<std::string> out;
    for (auto c : cols) out.push_back(L.specs[c].name);
    return out;
}

/// Schedule [k x S] from JSON, each value a finite number in [0,1].
inline Mat parse_schedule(const json& j, std::size_t k, std::size_t S) {
    const std::string shape = std::to_string(k) + "x" + std::to_string(S);
    if (!j.is_array() || j.size() != k) throw HttpError(400, "schedule must be a " + shape + " array of rows", "schedule");
    Mat m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(S));
    for (std::size_t r = 0; r < k; ++r) {
        const std::string rp = "schedule[" + std::to_string(r) + "]";
        if (!j[r].is_array() || j[r].size() != S) throw HttpError(400, "schedule must be a " + shape + " array of rows", rp);
        for (std::size_t c = 0; c < S; ++c) {
            const std::string fp = rp + "[" + std::to_string(c) + "]";
            if (!j[r][c].is_number()) throw HttpError(400, "schedule entries must be numbers", fp);
            const double v = j[r][c].get<double>();
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw HttpError(400, "schedule entries must lie in [0,1]", fp);
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return m;
}

inline ts::WindowSample session_window(const Session& s, std::size_t cursor) {
    if (cursor > s.max_cursor())
        throw HttpError(416, "cursor " + std::to_string(cursor) + " outside [0, " + std::to_string(s.max_cursor()) + "]", "cursor");
    const auto& L = s.evaluator.layout();
    return ts::window_at(s.frame, cursor, {L.w(), L.k(), 1});
}

/// Past w rows of every variable and the k-hour covariate forecast; nothing else about the future.
inline json window_json(const Session& s, std::size_t cursor) {
    const auto w = session_window(s, cursor);
    const auto& L = s.evaluator.layout();
    std::vector<std::string> vars;
    for (const auto& sp : L.specs) vars.push_back(sp.name);
    return {{"cursor", cursor},
            {"max_cursor", s.max_cursor()},
            {"w", L.w()},
            {"k", L.k()},
            {"time_of_last_row", ts::format_time(s.frame.time_at(cursor + L.w() - 1))},
            {"past", {{"variables", vars}, {"values", matrix_json(w.past)}}},
            {"future_covariates", {{"variables", names_of(L, L.cov_cols)}, {"values", matrix_json(w.future_cov)}}}};
}

/// Predicted levels, metrics and loss of one schedule on one window.
inline json evaluate_json(const Session& s, std::size_t cursor, const Mat& schedule) {
    const auto w = session_window(s, cursor);
    const auto& L = s.evaluator.layout();
    const Mat levels = s.evaluator.predict(w.past, w.future_cov, schedule).levels;
    const auto pts = names_of(L, L.level_cols);
    const auto per = bench::flood_metrics(levels, s.thresholds);
    json metrics = json::object();
    bench::FloodMetrics total;
    for (std::size_t n = 0; n < pts.size(); ++n) {
        metrics[pts[n]] = bench::flood_metrics_to_json(per[n]);
        total += per[n];
    }
    const double fl = models::flood_loss(levels, s.thresholds), wl = models::wastage_loss(levels, s.thresholds);
    return {{"cursor", cursor},
            {"schedule", {{"structures", names_of(L, L.ctrl_cols)}, {"values", matrix_json(schedule)}}},
            {"predicted_level_ft", {{"points", pts}, {"values", matrix_json(levels)}}},
            {"thresholds", {{"flood_level_ft", s.thresholds.flood}, {"waste_level_ft", s.thresholds.waste}}},
            {"metrics", metrics},
            {"metrics_total", bench::flood_metrics_to_json(total)},
            {"loss", {{"flood", fl}, {"waste", wl}, {"combined", s.weights.flood * fl + s.weights.waste * wl},
                      {"lambda_flood", s.weights.flood}, {"lambda_waste", s.weights.waste}}}};
}

inline json explain_json(const Session& s, std::size_t cursor) {
    const auto w = session_window(s, cursor);
    const auto& L = s.evaluator.layout();
    if (s.explain.point >= L.N()) throw HttpError(400, "explained point outside the level columns", "point");
    const auto h = explain::lime_attributions(s.evaluator, w, s.explain.point, s.explain.step_index(L.k()), s.variable_std, s.explain.lime);
    json out{{"cursor", cursor}, {"point", L.specs[L.level_cols[s.explain.point]].name}, {"r2", h.r2},
             {"low_fidelity", !(h.r2 >= s.explain.min_r2)}, {"heatmap", explain::heatmap_to_json(h)}};
    if (s.evaluator.arch() == models::Architecture::gtn_lite) out["attention"] = explain::attention_to_json(explain::attention_map(s.evaluator, w));
    return out;
}

/**
 * Loads a session from an artifacts directory holding `evaluator`,
 * optionally `manager`, a scenario `frame.csv` and `session.json` with
 * thresholds, loss weights and explain settings.
 */
inline Session load_session(const std::filesystem::path& dir, std::size_t cursor = 0) {
    auto ev = models::EvaluatorModel::load((dir / "evaluator").string());
    ev.freeze();
    const auto& L = ev.layout();
    std::optional<models::ManagerModel> mgr;
    if (std::filesystem::exists(dir / "manager.json")) mgr = models::ManagerModel::load((dir / "manager").string());
    json cfg = json::object();
    if (std::ifstream in(dir / "session.json"); in) {
        try {
            cfg = json::parse(in);
        } catch (const json::exception& e) {
            throw IngestionError((dir / "session.json").string() + ": " + e.what());
        }
    }
    Session s{ev, mgr, ts::read_csv((dir / "frame.csv").string()), Thresholds::uniform(L.N()), {}, {}, {}, cursor};
    if (cfg.contains("thresholds")) {
        s.thresholds.flood = cfg["thresholds"].at("flood_level_ft").get<std::vector<double>>();
        s.thresholds.waste = cfg["thresholds"].at("waste_level_ft").get<std::vector<double>>();
    }
    if (cfg.contains("weights")) {
        s.weights.flood = cfg["weights"].value("flood", s.weights.flood);
        s.weights.waste = cfg["weights"].value("waste", s.weights.waste);
    }
    if (cfg.contains("explain")) s.explain = explain::explain_config_from_json(cfg["explain"]);
    if (ev.meta().contains("variable_std")) s.variable_std = ev.meta()["variable_std"].get<std::vector<double>>();
    else s.variable_std = ev.norm().scale;
    s.validate();
    return s;
}

/// Writes the artifacts that load_session reads back.
inline void save_session(const std::filesystem::path& dir, const Session& s) {
    std::filesystem::create_directories(dir);
    auto ev = s.evaluator.clone();
    ev.meta()["variable_std"] = s.variable_std;
    ev.save((dir / "evaluator").string());
    std::filesystem::remove(dir / "manager.json");
    if (s.manager) s.manager->save((dir / "manager").string());
    ts::write_csv((dir / "frame.csv").string(), s.frame);
    const json cfg{{"thresholds", {{"flood_level_ft", s.thresholds.flood}, {"waste_level_ft", s.thresholds.waste}}},
                   {"weights", {{"flood", s.weights.flood}, {"waste", s.weights.waste}}},
                   {"explain", explain::explain_config_to_json(s.explain)}};
    std::ofstream out(dir / "session.json");
    if (!out) throw ConfigurationError("cannot write " + (dir / "session.json").string());
    out << cfg.dump(2) << '\n';
}

/**
 * HTTP front end. Handlers run concurrently on a snapshot of the current
 * session; POST /session swaps the snapshot under a mutex.
 */
class ControlService {
public:
    ControlService() { routes(); }

    void set_session(Session s) {
        s.validate();
        auto p = std::make_shared<const Session>(std::move(s));
        std::lock_guard lock(mu_);
        session_ = std::move(p);
    }

    std::shared_ptr<const Session> session() const {
        std::lock_guard lock(mu_);
        return session_;
    }

    /// Serves files under `dir` at / (the console bundle).
    bool mount_static(const std::string& dir) { return server_.set_mount_point("/", dir); }

    httplib::Server& server() { return server_; }

    int bind_any(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
    bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }

private:
    static void send(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    template <class F>
    void guarded(httplib::Response& res, F&& fn) {
        try {
            send(res, 200, fn());
        } catch (const HttpError& e) {
            json body{{"error", e.what()}};
            if (!e.field.empty()) body["field"] = e.field;
            send(res, e.status, body);
        } catch (const json::exception& e) {
            send(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
        } catch (const ConfigurationError& e) {
            send(res, 400, {{"error", e.what()}});
        } catch (const std::exception& e) {
            send(res, 500, {{"error", e.what()}});
        }
    }

    std::shared_ptr<const Session> require() const {
        auto s = session();
        if (!s) throw HttpError(409, "no session loaded; POST /session first");
        return s;
    }

    static std::size_t cursor_of(const Session& s, const httplib::Request& req, const json* body = nullptr) {
        if (body && body->contains("cursor")) {
            const auto& c = (*body)["cursor"];
            if (!c.is_number_integer() || c.get<long long>() < 0) throw HttpError(400, "cursor must be a non-negative integer", "cursor");
            return c.get<std::size_t>();
        }
        if (req.has_param("cursor")) {
            const std::string v = req.get_param_value("cursor");
            std::size_t pos = 0;
            unsigned long long c = 0;
            try {
                c = std::stoull(v, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos == 0 || pos != v.size() || v.front() == '-') throw HttpError(400, "cursor must be a non-negative integer", "cursor");
            return static_cast<std::size_t>(c);
        }
        return s.cursor;
    }

    static json body_of(const httplib::Request& req) {
        if (req.body.empty()) return json::object();
        json j = json::parse(req.body);
        if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
        return j;
    }

    void routes() {
        server_.Get("/health", [](const httplib::Request&, httplib::Response& res) { send(res, 200, {{"ok", true}}); });
        server_.Get("/session", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                auto s = require();
                const auto& L = s->evaluator.layout();
                return json{{"loaded", true}, {"w", L.w()}, {"k", L.k()}, {"cursor", s->cursor}, {"max_cursor", s->max_cursor()},
                            {"points", names_of(L, L.level_cols)}, {"structures", names_of(L, L.ctrl_cols)},
                            {"evaluator", models::to_string(s->evaluator.arch())}, {"manager", s->manager.has_value()},
                            {"thresholds", {{"flood_level_ft", s->thresholds.flood}, {"waste_level_ft", s->thresholds.waste}}}};
            });
        });
        server_.Post("/session", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json b = body_of(req);
                if (!b.contains("artifacts") || !b["artifacts"].is_string()) throw HttpError(400, "artifacts directory required", "artifacts");
                if (b.contains("cursor") && (!b["cursor"].is_number_integer() || b["cursor"].get<long long>() < 0))
                    throw HttpError(400, "cursor must be a non-negative integer", "cursor");
                const std::size_t cursor = b.contains("cursor") ? b["cursor"].get<std::size_t>() : 0;
                std::optional<Session> s;
                try {
                    s.emplace(load_session(b["artifacts"].get<std::string>(), cursor));
                } catch (const Error& e) {
                    throw HttpError(400, e.what(), "artifacts");
                }
                set_session(std::move(*s));
                return json{{"loaded", true}, {"cursor", cursor}};
            });
        });
        server_.Get("/window", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto s = require();
                return window_json(*s, cursor_of(*s, req));
            });
        });
        server_.Post("/evaluate", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto s = require();
                const json b = body_of(req);
                if (!b.contains("schedule")) throw HttpError(400, "schedule required", "schedule");
                const auto& L = s->evaluator.layout();
                const Mat m = parse_schedule(b["schedule"], L.k(), L.S());
                return evaluate_json(*s, cursor_of(*s, req, &b), m);
            });
        });
        server_.Post("/suggest", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto s = require();
                if (!s->manager) throw HttpError(409, "session has no manager artifact");
                const json b = body_of(req);
                const std::size_t cursor = cursor_of(*s, req, &b);
                const auto w = session_window(*s, cursor);
                json out = evaluate_json(*s, cursor, s->manager->suggest_schedule(w.past, w.future_cov));
                out["source"] = "manager";
                return out;
            });
        });
        server_.Get("/explain", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto s = require();
                return explain_json(*s, cursor_of(*s, req));
            });
        });
    }

    httplib::Server server_;
    mutable std::mutex mu_;
    std::shared_ptr<const Session> session_;
};

} // namespace fidlar::service
