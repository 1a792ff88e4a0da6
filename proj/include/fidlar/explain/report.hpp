#pragma once

#include "../hydro/topology.hpp"
#include "explain.hpp"

#include <filesystem>
#include <fstream>

namespace fidlar::explain {

struct ExplainConfig {
    std::size_t point = 0;            ///< explained level column
    std::size_t step = 0;             ///< explained horizon step, 1-based; 0 = last
    std::size_t attention_samples = 64;
    double min_r2 = 0.6;
    LimeConfig lime;

    std::size_t step_index(std::size_t k) const {
        if (step > k) throw ConfigurationError("explained step beyond the horizon");
        return step == 0 ? k - 1 : step - 1;
    }
};

inline json explain_config_to_json(const ExplainConfig& c) {
    return {{"point", c.point}, {"step", c.step}, {"attention_samples", c.attention_samples}, {"min_r2", c.min_r2},
            {"n_perturb", c.lime.n_perturb}, {"noise", c.lime.noise}, {"kernel_width", c.lime.kernel_width},
            {"ridge", c.lime.ridge}, {"seed", c.lime.seed}};
}

inline ExplainConfig explain_config_from_json(const json& j, ExplainConfig c = {}) {
    c.point = j.value("point", c.point);
    c.step = j.value("step", c.step);
    c.attention_samples = j.value("attention_samples", c.attention_samples);
    c.min_r2 = j.value("min_r2", c.min_r2);
    c.lime.n_perturb = j.value("n_perturb", c.lime.n_perturb);
    c.lime.noise = j.value("noise", c.lime.noise);
    c.lime.kernel_width = j.value("kernel_width", c.lime.kernel_width);
    c.lime.ridge = j.value("ridge", c.lime.ridge);
    c.lime.seed = j.value("seed", c.lime.seed);
    c.lime.validate();
    return c;
}

struct RegimeReport {
    Regime regime;
    std::size_t sample = 0;
    AttributionHeatmap heatmap;
};

struct ExplainReport {
    std::optional<AttentionMap> attention; ///< gtn_lite only
    std::vector<RegimeReport> regimes;
    std::vector<Finding> findings;
    std::string point_name;

    const Finding& finding(const std::string& name) const {
        for (const auto& f : findings)
            if (f.name == name) return f;
        throw ConfigurationError("no finding named " + name);
    }

    json to_json() const {
        json r = json::array();
        for (const auto& g : regimes)
            r.push_back({{"regime", to_string(g.regime)}, {"sample", g.sample}, {"heatmap", heatmap_to_json(g.heatmap)}});
        json f = json::array();
        for (const auto& x : findings) f.push_back(finding_to_json(x));
        json out{{"point", point_name}, {"regimes", r}, {"findings", f}};
        if (attention) out["attention"] = attention_to_json(*attention);
        return out;
    }
};

/**
 * Attention map with rain removed (gtn_lite only), LIME heatmaps for the
 * four tide regimes among `samples`, and the findings they support.
 */
inline ExplainReport explain_report(const models::EvaluatorModel& ev, const std::vector<ts::WindowSample>& samples,
                                    const std::vector<double>& var_std, const hydro::NetworkTopology& topo,
                                    const ExplainConfig& cfg) {
    if (samples.empty()) throw ConfigurationError("explain needs test samples");
    const auto& L = ev.layout();
    if (cfg.point >= L.N()) throw ConfigurationError("explained point outside the level columns");
    ExplainReport r;
    r.point_name = L.specs[L.level_cols[cfg.point]].station;
    if (ev.arch() == models::Architecture::gtn_lite) {
        std::vector<ts::WindowSample> dry;
        const std::size_t n = std::min(cfg.attention_samples, samples.size());
        for (std::size_t i = 0; i < n; ++i) dry.push_back(without_rain(samples[i * samples.size() / n], L));
        std::vector<const ts::WindowSample*> ptr;
        for (const auto& s : dry) ptr.push_back(&s);
        r.attention = attention_map(ev, ptr);
        r.findings.push_back(tide_attention_finding(*r.attention, L, topo));
    }
    std::vector<AttributionHeatmap> maps;
    std::vector<const ts::WindowSample*> used;
    for (Regime g : {Regime::low_tide, Regime::high_tide, Regime::rising, Regime::falling}) {
        const std::size_t i = pick_regime(samples, L, g);
        auto h = lime_attributions(ev, samples[i], cfg.point, cfg.step_index(L.k()), var_std, cfg.lime);
        maps.push_back(h);
        used.push_back(&samples[i]);
        r.regimes.push_back({g, i, std::move(h)});
    }
    for (auto& f : attribution_findings(maps, used, L, cfg.min_r2)) r.findings.push_back(std::move(f));
    return r;
}

inline void write_explain(const std::filesystem::path& dir, const ExplainReport& r) {
    std::filesystem::create_directories(dir);
    const auto put = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name);
        if (!out) throw ConfigurationError("cannot write " + (dir / name).string());
        out << text;
    };
    put("explain.json", r.to_json().dump(2) + "\n");
    if (r.attention) put("attention.svg", attention_svg(*r.attention, "variable attention, rain removed"));
    for (const auto& g : r.regimes)
        put("lime_" + std::string(to_string(g.regime)) + ".svg",
            heatmap_svg(g.heatmap, "attributions to " + r.point_name + " at t+" + std::to_string(g.heatmap.step + 1) + ", " +
                                       std::string(to_string(g.regime))));
}

} // namespace fidlar::explain
