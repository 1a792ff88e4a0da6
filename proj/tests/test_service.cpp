#include "fixtures.hpp"

#include <fidlar/service/service.hpp>

#include <gtest/gtest.h>

#include <future>
#include <thread>

using namespace fidlar;
using fidlar::testing::TempDir;
using fidlar::testing::tiny;
using json = nlohmann::json;

namespace {

service::Session tiny_session(bool with_manager) {
    const auto& t = tiny();
    auto ev = models::EvaluatorModel::build(fidlar::testing::small_net(models::Architecture::gtn_lite), t.layout, t.norm, 1);
    ev.freeze();
    std::optional<models::ManagerModel> mgr;
    if (with_manager) mgr = models::ManagerModel::build(fidlar::testing::small_net(models::Architecture::gtn_lite), t.layout, t.norm, 3);
    explain::ExplainConfig ex;
    ex.lime.n_perturb = 200;
    return {ev, mgr, t.data.test[0].frame, Thresholds::uniform(t.layout.N()), {}, t.norm.scale, ex, 0};
}

/// Service on an ephemeral port, served from a background thread.
struct Running {
    service::ControlService svc;
    int port = 0;
    std::thread th;

    Running() {
        port = svc.bind_any();
        th = std::thread([this] { svc.listen_after_bind(); });
        while (!svc.server().is_running()) std::this_thread::yield();
    }
    ~Running() {
        svc.stop();
        th.join();
    }
    httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

json parse(const httplib::Result& r) {
    EXPECT_TRUE(r) << "request failed";
    return json::parse(r->body);
}

json post(httplib::Client& c, const std::string& path, const json& body) {
    return parse(c.Post(path, body.dump(), "application/json"));
}

json schedule_json(std::size_t k, std::size_t S, double v) {
    return service::matrix_json(Mat::Constant(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(S), v));
}

} // namespace

TEST(Session, SaveLoadRoundTrip) {
    const TempDir dir("fidlar_session");
    auto s = tiny_session(true);
    s.thresholds.flood[0] = 3.25;
    s.weights.waste = 0.3;
    service::save_session(dir.path, s);
    const auto back = service::load_session(dir.path, 2);
    EXPECT_EQ(back.cursor, 2u);
    EXPECT_TRUE(back.manager.has_value());
    EXPECT_EQ(back.thresholds.flood, s.thresholds.flood);
    EXPECT_DOUBLE_EQ(back.weights.waste, 0.3);
    EXPECT_EQ(back.frame.rows(), s.frame.rows());
    EXPECT_EQ(back.variable_std, s.variable_std);
    EXPECT_EQ(back.explain.lime.n_perturb, 200u);
    const auto w = service::session_window(s, 2);
    const Mat u = Mat::Constant(static_cast<Eigen::Index>(s.evaluator.layout().k()), static_cast<Eigen::Index>(s.evaluator.layout().S()), 0.4);
    EXPECT_TRUE(back.evaluator.predict(w.past, w.future_cov, u).levels.isApprox(s.evaluator.predict(w.past, w.future_cov, u).levels, 1e-9));
    EXPECT_THROW(service::load_session(dir.path, back.max_cursor() + 1), ConfigurationError);
}

TEST(Service, NeedsASessionFirst) {
    Running r;
    auto c = r.client();
    auto h = c.Get("/health");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->status, 200);
    for (const char* path : {"/session", "/window", "/explain"}) {
        auto res = c.Get(path);
        ASSERT_TRUE(res);
        EXPECT_EQ(res->status, 409) << path;
    }
    auto res = c.Post("/session", json{{"artifacts", "/nonexistent/fidlar"}}.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["field"], "artifacts");
}

TEST(Service, LoadsArtifactsOverHttp) {
    const TempDir dir("fidlar_service");
    service::save_session(dir.path, tiny_session(true));
    Running r;
    auto c = r.client();
    const json loaded = post(c, "/session", {{"artifacts", dir.path.string()}, {"cursor", 3}});
    EXPECT_TRUE(loaded["loaded"].get<bool>());
    const json s = parse(c.Get("/session"));
    const auto& L = tiny().layout;
    EXPECT_EQ(s["cursor"], 3);
    EXPECT_EQ(s["k"], L.k());
    EXPECT_EQ(s["points"].size(), L.N());
    EXPECT_EQ(s["structures"].size(), L.S());
    EXPECT_TRUE(s["manager"].get<bool>());
    EXPECT_EQ(s["evaluator"], "gtn_lite");
}

TEST(Service, EvaluateShapeDeterminismAndMetrics) {
    Running r;
    const auto sess = tiny_session(false);
    r.svc.set_session(sess);
    const auto& L = tiny().layout;
    auto c = r.client();
    const json body{{"schedule", schedule_json(L.k(), L.S(), 0.25)}, {"cursor", 5}};
    const json a = post(c, "/evaluate", body), b = post(c, "/evaluate", body);
    EXPECT_EQ(a, b);
    const auto& lv = a["predicted_level_ft"]["values"];
    ASSERT_EQ(lv.size(), L.k());
    for (const auto& row : lv) EXPECT_EQ(row.size(), L.N());
    EXPECT_EQ(a["cursor"], 5);

    const auto w = service::session_window(sess, 5);
    const Mat direct = sess.evaluator.predict(w.past, w.future_cov, Mat::Constant(static_cast<Eigen::Index>(L.k()), static_cast<Eigen::Index>(L.S()), 0.25)).levels;
    for (std::size_t i = 0; i < L.k(); ++i)
        for (std::size_t n = 0; n < L.N(); ++n)
            EXPECT_DOUBLE_EQ(lv[i][n].get<double>(), direct(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)));
    const double fl = models::flood_loss(direct, sess.thresholds), wl = models::wastage_loss(direct, sess.thresholds);
    EXPECT_NEAR(a["loss"]["combined"].get<double>(), sess.weights.flood * fl + sess.weights.waste * wl, 1e-12);
    EXPECT_EQ(a["metrics"].size(), L.N());
}

TEST(Service, BadInputNamesTheField) {
    Running r;
    r.svc.set_session(tiny_session(false));
    const auto& L = tiny().layout;
    auto c = r.client();
    json sched = schedule_json(L.k(), L.S(), 0.5);
    sched[1][2] = 1.5;
    auto res = c.Post("/evaluate", json{{"schedule", sched}}.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["field"], "schedule[1][2]");

    sched = schedule_json(L.k() - 1, L.S(), 0.5);
    res = c.Post("/evaluate", json{{"schedule", sched}}.dump(), "application/json");
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["field"], "schedule");

    sched = schedule_json(L.k(), L.S(), 0.5);
    sched[0][0] = "open";
    res = c.Post("/evaluate", json{{"schedule", sched}}.dump(), "application/json");
    EXPECT_EQ(json::parse(res->body)["field"], "schedule[0][0]");

    res = c.Post("/evaluate", "{not json", "application/json");
    EXPECT_EQ(res->status, 400);
    res = c.Post("/evaluate", "{}", "application/json");
    EXPECT_EQ(json::parse(res->body)["field"], "schedule");
    res = c.Get("/window?cursor=-1");
    EXPECT_EQ(res->status, 400);
    res = c.Get("/window?cursor=abc");
    EXPECT_EQ(res->status, 400);
}

TEST(Service, CursorOutOfRangeIs416) {
    Running r;
    const auto s = tiny_session(false);
    r.svc.set_session(s);
    auto c = r.client();
    auto ok = c.Get("/window?cursor=" + std::to_string(s.max_cursor()));
    ASSERT_TRUE(ok);
    EXPECT_EQ(ok->status, 200);
    auto res = c.Get("/window?cursor=" + std::to_string(s.max_cursor() + 1));
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 416);
    EXPECT_EQ(json::parse(res->body)["field"], "cursor");
    const auto& L = tiny().layout;
    res = c.Post("/evaluate", json{{"schedule", schedule_json(L.k(), L.S(), 0.0)}, {"cursor", s.max_cursor() + 7}}.dump(), "application/json");
    EXPECT_EQ(res->status, 416);
}

TEST(Service, WindowExposesNoFutureLevelsOrControls) {
    Running r;
    const auto s = tiny_session(false);
    r.svc.set_session(s);
    const auto& L = tiny().layout;
    auto c = r.client();
    const std::size_t cur = 4;
    const json w = parse(c.Get("/window?cursor=" + std::to_string(cur)));
    ASSERT_EQ(w["past"]["values"].size(), L.w());
    for (std::size_t i = 0; i < L.w(); ++i)
        for (std::size_t v = 0; v < L.V(); ++v)
            EXPECT_DOUBLE_EQ(w["past"]["values"][i][v].get<double>(), s.frame(cur + i, v));
    const auto cov = w["future_covariates"]["variables"].get<std::vector<std::string>>();
    EXPECT_EQ(cov, service::names_of(L, L.cov_cols));
    for (const auto& name : cov) {
        for (auto col : L.level_cols) EXPECT_NE(name, L.specs[col].name);
        for (auto col : L.ctrl_cols) EXPECT_NE(name, L.specs[col].name);
    }
    ASSERT_EQ(w["future_covariates"]["values"].size(), L.k());
    // nothing in the reply mentions levels past the window
    const std::string text = w.dump();
    EXPECT_EQ(text.find("future_levels"), std::string::npos);
    EXPECT_EQ(text.find("future_controls"), std::string::npos);
}

TEST(Service, SuggestStaysInRangeAndNeedsManager) {
    Running r;
    r.svc.set_session(tiny_session(false));
    auto c = r.client();
    auto res = c.Post("/suggest", "{}", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 409);

    r.svc.set_session(tiny_session(true));
    const auto& L = tiny().layout;
    const json sg = post(c, "/suggest", {{"cursor", 2}});
    EXPECT_EQ(sg["source"], "manager");
    const auto& u = sg["schedule"]["values"];
    ASSERT_EQ(u.size(), L.k());
    for (const auto& row : u) {
        ASSERT_EQ(row.size(), L.S());
        for (const auto& v : row) {
            EXPECT_GE(v.get<double>(), 0.0);
            EXPECT_LE(v.get<double>(), 1.0);
        }
    }
    // the suggestion scores exactly like the same schedule sent to /evaluate
    const json ev = post(c, "/evaluate", {{"schedule", u}, {"cursor", 2}});
    EXPECT_EQ(ev["predicted_level_ft"], sg["predicted_level_ft"]);
}

TEST(Service, ExplainReportsFidelityAndAttention) {
    Running r;
    r.svc.set_session(tiny_session(false));
    const auto& L = tiny().layout;
    auto c = r.client();
    const json e = parse(c.Get("/explain?cursor=1"));
    ASSERT_TRUE(e.contains("r2"));
    EXPECT_GT(e["r2"].get<double>(), 0.99);
    EXPECT_FALSE(e["low_fidelity"].get<bool>());
    EXPECT_TRUE(e.contains("heatmap"));
    EXPECT_TRUE(e.contains("attention"));
    EXPECT_EQ(e["point"], L.specs[L.level_cols[0]].name);
}

TEST(Service, ConcurrentCallsMatchSerialCalls) {
    Running r;
    r.svc.set_session(tiny_session(true));
    const auto& L = tiny().layout;
    auto c = r.client();
    std::vector<json> bodies;
    for (int i = 0; i < 8; ++i) bodies.push_back({{"schedule", schedule_json(L.k(), L.S(), 0.1 * i)}, {"cursor", i}});
    std::vector<json> serial;
    for (const auto& b : bodies) serial.push_back(post(c, "/evaluate", b));
    const json sg_serial = post(c, "/suggest", {{"cursor", 1}});

    std::vector<std::future<std::pair<json, json>>> fut;
    for (const auto& b : bodies)
        fut.push_back(std::async(std::launch::async, [&r, b] {
            auto cc = r.client();
            return std::make_pair(post(cc, "/evaluate", b), post(cc, "/suggest", {{"cursor", 1}}));
        }));
    for (std::size_t i = 0; i < fut.size(); ++i) {
        const auto [ev, sg] = fut[i].get();
        EXPECT_EQ(ev, serial[i]) << i;
        EXPECT_EQ(sg, sg_serial) << i;
    }
}
