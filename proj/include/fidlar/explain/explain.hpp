#pragma once

#include "../models/evaluator.hpp"
#include "../svg.hpp"
#include "lime.hpp"

#include <numeric>

namespace fidlar::explain {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Attention

struct AttentionMap {
    Mat scores;                      ///< [V x V]; row i is how variable i attends over all variables
    std::vector<std::string> labels;
    std::size_t samples = 0;
};

/// Variable-to-variable attention of a gtn_lite evaluator, averaged over `samples`.
inline AttentionMap attention_map(const models::EvaluatorModel& ev, const std::vector<const ts::WindowSample*>& samples) {
    if (ev.arch() != models::Architecture::gtn_lite) throw ContractViolation("attention maps need a gtn_lite evaluator");
    if (samples.empty()) throw ConfigurationError("attention map needs at least one sample");
    const auto& L = ev.layout();
    const auto V = static_cast<Eigen::Index>(L.V());
    AttentionMap out;
    out.scores = Mat::Zero(V, V);
    for (const auto& s : L.specs) out.labels.push_back(s.name);
    ad::NoGradGuard ng;
    const auto bb = ev.batcher();
    const models::Batch b = bb.make(samples, false);
    const auto enc = ev.encode(b.past, b.cov);
    const auto& a = enc.attention.value();
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (Eigen::Index r = 0; r < V; ++r)
            for (Eigen::Index c = 0; c < V; ++c)
                out.scores(r, c) += a.data[(i * L.V() + static_cast<std::size_t>(r)) * L.V() + static_cast<std::size_t>(c)];
    out.scores /= static_cast<double>(samples.size());
    out.samples = samples.size();
    return out;
}

inline AttentionMap attention_map(const models::EvaluatorModel& ev, const ts::WindowSample& s) {
    return attention_map(ev, std::vector<const ts::WindowSample*>{&s});
}

/// Copy of a window with rain zeroed in the past block and in the forecast.
inline ts::WindowSample without_rain(const ts::WindowSample& s, const models::ModelLayout& L) {
    ts::WindowSample out = s;
    for (std::size_t v = 0; v < L.V(); ++v)
        if (L.specs[v].role == ts::Role::rain) out.past.col(static_cast<Eigen::Index>(v)).setZero();
    for (std::size_t c = 0; c < L.C(); ++c)
        if (L.specs[L.cov_cols[c]].role == ts::Role::rain) out.future_cov.col(static_cast<Eigen::Index>(c)).setZero();
    return out;
}

// ---------------------------------------------------------------------------
// LIME on the evaluator

/**
 * Flattened evaluator input: past block row-major [w x V], then the
 * covariate forecast [k x C], then the schedule [k x S].
 */
struct InputLayout {
    std::size_t w = 0, k = 0, V = 0, C = 0, S = 0;

    explicit InputLayout(const models::ModelLayout& L) : w(L.w()), k(L.k()), V(L.V()), C(L.C()), S(L.S()) {}
    std::size_t size() const { return w * V + k * C + k * S; }
    std::size_t past(std::size_t t, std::size_t v) const { return t * V + v; }
    std::size_t cov(std::size_t j, std::size_t c) const { return w * V + j * C + c; }
    std::size_t ctrl(std::size_t j, std::size_t s) const { return w * V + k * C + j * S + s; }
};

inline Eigen::VectorXd flatten_input(const InputLayout& I, const Mat& past, const Mat& cov, const Mat& ctrl) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(I.size()));
    for (std::size_t t = 0; t < I.w; ++t)
        for (std::size_t v = 0; v < I.V; ++v) x(static_cast<Eigen::Index>(I.past(t, v))) = past(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v));
    for (std::size_t j = 0; j < I.k; ++j) {
        for (std::size_t c = 0; c < I.C; ++c) x(static_cast<Eigen::Index>(I.cov(j, c))) = cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
        for (std::size_t s = 0; s < I.S; ++s) x(static_cast<Eigen::Index>(I.ctrl(j, s))) = ctrl(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(s));
    }
    return x;
}

/// Per-variable standard deviation over a set of frames (population form).
inline std::vector<double> variable_std(const std::vector<ts::SeriesFrame>& frames) {
    if (frames.empty()) throw ConfigurationError("variable_std needs at least one frame");
    const auto V = frames.front().values().cols();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(V), sq = Eigen::VectorXd::Zero(V);
    double n = 0;
    for (const auto& f : frames) {
        sum += f.values().colwise().sum().transpose();
        sq += f.values().array().square().matrix().colwise().sum().transpose();
        n += static_cast<double>(f.values().rows());
    }
    std::vector<double> out(static_cast<std::size_t>(V));
    for (Eigen::Index v = 0; v < V; ++v) out[static_cast<std::size_t>(v)] = std::sqrt(std::max(0.0, sq(v) / n - std::pow(sum(v) / n, 2)));
    return out;
}

/**
 * Attributions of one predicted level (point `point`, horizon step `step`)
 * laid out like the model's view of time: rows are variables, columns are
 * the w past hours then the k forecast hours. Forecast columns hold the
 * covariate and schedule cells; forecast water levels are not inputs and
 * stay zero. `importance` is |coefficient| times the variable's training
 * std, so cells with different units compare.
 */
struct AttributionHeatmap {
    Mat coef;        ///< [V x (w + k)]
    Mat importance;  ///< [V x (w + k)]
    std::vector<std::string> variables;
    std::size_t point = 0, step = 0, w = 0, k = 0;
    double r2 = 0.0;
    double prediction_ft = 0.0;
    std::size_t samples = 0;
};

inline AttributionHeatmap lime_attributions(const models::EvaluatorModel& ev, const ts::WindowSample& s, std::size_t point,
                                            std::size_t step, const std::vector<double>& var_std, const LimeConfig& cfg) {
    const auto& L = ev.layout();
    L.check_sample(s);
    if (point >= L.N() || step >= L.k()) throw ConfigurationError("explained output outside the k x N prediction");
    if (var_std.size() != L.V()) throw StructuralError("variable std has " + std::to_string(var_std.size()) + " entries, layout has " + std::to_string(L.V()));
    const InputLayout I(L);
    const Eigen::VectorXd x0 = flatten_input(I, s.past, s.future_cov, s.future_controls);
    Eigen::VectorXd scale(static_cast<Eigen::Index>(I.size()));
    for (std::size_t t = 0; t < I.w; ++t)
        for (std::size_t v = 0; v < I.V; ++v) scale(static_cast<Eigen::Index>(I.past(t, v))) = var_std[v];
    for (std::size_t j = 0; j < I.k; ++j) {
        for (std::size_t c = 0; c < I.C; ++c) scale(static_cast<Eigen::Index>(I.cov(j, c))) = var_std[L.cov_cols[c]];
        for (std::size_t q = 0; q < I.S; ++q) scale(static_cast<Eigen::Index>(I.ctrl(j, q))) = var_std[L.ctrl_cols[q]];
    }
    const auto f = [&](const Mat& X) {
        ad::NoGradGuard ng;
        const auto n = static_cast<std::size_t>(X.rows());
        std::vector<Mat> past(n), cov(n), ctrl(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = X.row(static_cast<Eigen::Index>(i));
            past[i] = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(r.data(), static_cast<Eigen::Index>(I.w), static_cast<Eigen::Index>(I.V));
            cov[i].resize(static_cast<Eigen::Index>(I.k), static_cast<Eigen::Index>(I.C));
            ctrl[i].resize(static_cast<Eigen::Index>(I.k), static_cast<Eigen::Index>(I.S));
            for (std::size_t j = 0; j < I.k; ++j) {
                for (std::size_t c = 0; c < I.C; ++c) cov[i](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = r(static_cast<Eigen::Index>(I.cov(j, c)));
                for (std::size_t q = 0; q < I.S; ++q) ctrl[i](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(q)) = r(static_cast<Eigen::Index>(I.ctrl(j, q)));
            }
        }
        std::vector<const Mat*> pp, cp, up;
        for (std::size_t i = 0; i < n; ++i) pp.push_back(&past[i]), cp.push_back(&cov[i]), up.push_back(&ctrl[i]);
        const auto lv = models::split_batch(ev.to_ft(ev.forward(ev.batcher().make(pp, cp, up))).value());
        Eigen::VectorXd out(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) out(static_cast<Eigen::Index>(i)) = lv[i](static_cast<Eigen::Index>(step), static_cast<Eigen::Index>(point));
        return out;
    };
    const LimeFit fit = lime(f, x0, scale, cfg);

    AttributionHeatmap h;
    h.point = point;
    h.step = step;
    h.w = I.w;
    h.k = I.k;
    h.r2 = fit.r2;
    h.samples = fit.samples;
    h.prediction_ft = ev.predict(s).levels(static_cast<Eigen::Index>(step), static_cast<Eigen::Index>(point));
    for (const auto& sp : L.specs) h.variables.push_back(sp.name);
    h.coef = Mat::Zero(static_cast<Eigen::Index>(I.V), static_cast<Eigen::Index>(I.w + I.k));
    for (std::size_t t = 0; t < I.w; ++t)
        for (std::size_t v = 0; v < I.V; ++v) h.coef(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(t)) = fit.coef(static_cast<Eigen::Index>(I.past(t, v)));
    for (std::size_t j = 0; j < I.k; ++j) {
        const auto col = static_cast<Eigen::Index>(I.w + j);
        for (std::size_t c = 0; c < I.C; ++c) h.coef(static_cast<Eigen::Index>(L.cov_cols[c]), col) = fit.coef(static_cast<Eigen::Index>(I.cov(j, c)));
        for (std::size_t q = 0; q < I.S; ++q) h.coef(static_cast<Eigen::Index>(L.ctrl_cols[q]), col) = fit.coef(static_cast<Eigen::Index>(I.ctrl(j, q)));
    }
    h.importance = h.coef.cwiseAbs();
    for (std::size_t v = 0; v < I.V; ++v) h.importance.row(static_cast<Eigen::Index>(v)) *= var_std[v];
    return h;
}

// ---------------------------------------------------------------------------
// Regimes and findings

enum class Regime { low_tide, high_tide, rising, falling };

inline std::string_view to_string(Regime r) {
    switch (r) {
    case Regime::low_tide: return "low_tide";
    case Regime::high_tide: return "high_tide";
    case Regime::rising: return "rising";
    case Regime::falling: return "falling";
    }
    return "?";
}

inline std::size_t tide_column(const models::ModelLayout& L) {
    for (std::size_t v = 0; v < L.V(); ++v)
        if (L.specs[v].role == ts::Role::tide) return v;
    throw StructuralError("layout has no tide variable");
}

/// Index of the sample ending at the lowest tide, highest tide, fastest rise, fastest fall.
inline std::size_t pick_regime(const std::vector<ts::WindowSample>& samples, const models::ModelLayout& L, Regime r) {
    if (samples.empty()) throw ConfigurationError("no samples to pick a regime from");
    const auto tc = static_cast<Eigen::Index>(tide_column(L));
    const auto t = static_cast<Eigen::Index>(L.w() - 1);
    const auto key = [&](const ts::WindowSample& s) {
        const double level = s.past(t, tc), slope = s.past(t, tc) - s.past(t - 1, tc);
        switch (r) {
        case Regime::low_tide: return level;
        case Regime::high_tide: return -level;
        case Regime::rising: return -slope;
        case Regime::falling: return slope;
        }
        return 0.0;
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < samples.size(); ++i)
        if (key(samples[i]) < key(samples[best])) best = i;
    return best;
}

enum class Verdict { holds, fails, low_fidelity };

inline std::string_view to_string(Verdict v) {
    switch (v) {
    case Verdict::holds: return "holds";
    case Verdict::fails: return "fails";
    case Verdict::low_fidelity: return "low_fidelity";
    }
    return "?";
}

struct Finding {
    std::string name;
    Verdict verdict = Verdict::low_fidelity;
    double lhs = 0.0, rhs = 0.0; ///< the inequality asserted is lhs > rhs
    std::string detail;
};

inline json finding_to_json(const Finding& f) {
    return {{"name", f.name}, {"verdict", to_string(f.verdict)}, {"lhs", f.lhs}, {"rhs", f.rhs}, {"detail", f.detail}};
}

inline Finding compare(std::string name, double lhs, double rhs, std::string detail, bool fidelity_ok = true) {
    Finding f{std::move(name), Verdict::low_fidelity, lhs, rhs, std::move(detail)};
    if (fidelity_ok) f.verdict = lhs > rhs ? Verdict::holds : Verdict::fails;
    return f;
}

/**
 * (a) With rain removed, attention from each tidal control point's level
 * variable to the tide exceeds its attention to rain (averaged over points).
 */
inline Finding tide_attention_finding(const AttentionMap& a, const models::ModelLayout& L, const hydro::NetworkTopology& topo) {
    const auto tide = static_cast<Eigen::Index>(tide_column(L));
    Eigen::Index rain = -1;
    for (std::size_t v = 0; v < L.V(); ++v)
        if (L.specs[v].role == ts::Role::rain) rain = static_cast<Eigen::Index>(v);
    if (rain < 0) throw StructuralError("layout has no rain variable");
    double to_tide = 0.0, to_rain = 0.0;
    std::size_t n = 0;
    for (int p : topo.unprotected_points()) {
        const auto& id = topo.cells[static_cast<std::size_t>(p)].id;
        for (std::size_t i = 0; i < L.N(); ++i)
            if (L.specs[L.level_cols[i]].station == id) {
                const auto r = static_cast<Eigen::Index>(L.level_cols[i]);
                to_tide += a.scores(r, tide);
                to_rain += a.scores(r, rain);
                ++n;
            }
    }
    if (n == 0) throw StructuralError("no level variable at a tidal control point");
    return compare("tide_attention_dominance", to_tide / static_cast<double>(n), to_rain / static_cast<double>(n),
                   "mean attention from tidal-point levels to tide vs to rain, rain removed");
}

/// Mean importance over heatmaps with R^2 >= min_r2; the second value counts them.
inline std::pair<Mat, std::size_t> pooled_importance(const std::vector<AttributionHeatmap>& maps, double min_r2) {
    Mat sum;
    std::size_t n = 0;
    for (const auto& h : maps) {
        if (!(h.r2 >= min_r2)) continue;
        if (n == 0) sum = Mat::Zero(h.importance.rows(), h.importance.cols());
        sum += h.importance;
        ++n;
    }
    if (n) sum /= static_cast<double>(n);
    return {sum, n};
}

/**
 * (b) forecast columns carry more importance than any equally long slice of
 * the past; (c) schedule importance per forecast hour is higher at hours
 * whose forecast tide is below that window's median; (d) importance over the
 * most recent k past hours exceeds that over the oldest k.
 * Each is asserted only on heatmaps whose surrogate R^2 reaches `min_r2`.
 */
inline std::vector<Finding> attribution_findings(const std::vector<AttributionHeatmap>& maps,
                                                 const std::vector<const ts::WindowSample*>& samples,
                                                 const models::ModelLayout& L, double min_r2 = 0.6) {
    if (maps.size() != samples.size()) throw StructuralError("one sample per heatmap expected");
    const auto [imp, used] = pooled_importance(maps, min_r2);
    const bool ok = used > 0;
    const auto w = static_cast<Eigen::Index>(L.w()), k = static_cast<Eigen::Index>(L.k());
    std::vector<Finding> out;
    const std::string gate = "over " + std::to_string(used) + " of " + std::to_string(maps.size()) + " heatmaps with R^2 >= " + ts::format_double(min_r2);
    if (!ok) {
        for (const char* n : {"future_covariates_dominate", "schedule_at_low_tide", "lag_decay"}) out.push_back(compare(n, 0, 0, gate, false));
        return out;
    }
    {
        const double future = imp.rightCols(k).sum();
        double past = 0.0;
        for (Eigen::Index a = 0; a + k <= w; a += k) past = std::max(past, imp.middleCols(a, k).sum());
        out.push_back(compare("future_covariates_dominate", future, past, "forecast-column importance vs the largest past slice of k hours, " + gate));
    }
    {
        double low = 0.0, high = 0.0;
        std::size_t nl = 0, nh = 0;
        const auto tc = static_cast<Eigen::Index>([&] {
            for (std::size_t c = 0; c < L.C(); ++c)
                if (L.specs[L.cov_cols[c]].role == ts::Role::tide) return c;
            throw StructuralError("no tide covariate");
        }());
        for (std::size_t m = 0; m < maps.size(); ++m) {
            if (!(maps[m].r2 >= min_r2)) continue;
            Eigen::VectorXd tide = samples[m]->future_cov.col(tc);
            std::vector<double> sorted(tide.data(), tide.data() + tide.size());
            std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
            const double median = sorted[sorted.size() / 2];
            for (Eigen::Index j = 0; j < k; ++j) {
                double s = 0.0;
                for (std::size_t q = 0; q < L.S(); ++q)
                    if (L.specs[L.ctrl_cols[q]].role == ts::Role::gate) s += maps[m].importance(static_cast<Eigen::Index>(L.ctrl_cols[q]), w + j);
                if (tide(j) < median) low += s, ++nl;
                else high += s, ++nh;
            }
        }
        out.push_back(compare("schedule_at_low_tide", nl ? low / static_cast<double>(nl) : 0.0, nh ? high / static_cast<double>(nh) : 0.0,
                              "mean gate importance per forecast hour below vs at/above the median forecast tide, " + gate));
    }
    {
        const double recent = imp.middleCols(w - k, k).sum(), oldest = imp.leftCols(k).sum();
        out.push_back(compare("lag_decay", recent, oldest, "importance over the latest k past hours vs the oldest k, " + gate));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

inline std::vector<std::string> heatmap_columns(std::size_t w, std::size_t k) {
    std::vector<std::string> out;
    for (std::size_t t = 0; t < w; ++t) out.push_back("t-" + std::to_string(w - 1 - t));
    for (std::size_t j = 0; j < k; ++j) out.push_back("t+" + std::to_string(j + 1));
    return out;
}

inline json heatmap_to_json(const AttributionHeatmap& h) {
    json coef = json::array(), imp = json::array();
    for (Eigen::Index r = 0; r < h.coef.rows(); ++r) {
        std::vector<double> c, i;
        for (Eigen::Index t = 0; t < h.coef.cols(); ++t) c.push_back(h.coef(r, t)), i.push_back(h.importance(r, t));
        coef.push_back(c);
        imp.push_back(i);
    }
    return {{"variables", h.variables}, {"columns", heatmap_columns(h.w, h.k)}, {"point", h.point}, {"step", h.step},
            {"r2", h.r2}, {"prediction_ft", h.prediction_ft}, {"samples", h.samples}, {"coefficients", coef}, {"importance", imp}};
}

inline json attention_to_json(const AttentionMap& a) {
    json m = json::array();
    for (Eigen::Index r = 0; r < a.scores.rows(); ++r) {
        std::vector<double> row;
        for (Eigen::Index c = 0; c < a.scores.cols(); ++c) row.push_back(a.scores(r, c));
        m.push_back(row);
    }
    return {{"labels", a.labels}, {"scores", m}, {"samples", a.samples}};
}

inline std::string heatmap_svg(const AttributionHeatmap& h, const std::string& title) {
    return svg::heatmap(title + " (R^2 " + ts::format_double(h.r2) + ")", h.coef, h.variables, heatmap_columns(h.w, h.k), true);
}

inline std::string attention_svg(const AttentionMap& a, const std::string& title) {
    return svg::heatmap(title, a.scores, a.labels, a.labels, false);
}

} // namespace fidlar::explain
