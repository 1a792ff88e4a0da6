#pragma once

#include "../ad/tensor.hpp"
#include "../hydro/topology.hpp"
#include "../timeseries.hpp"

#include <json.hpp>

#include <string>
#include <string_view>
#include <vector>

namespace fidlar::models {

using ad::Array;
using ad::Shape;
using ad::Tensor;
using json = nlohmann::json;

enum class Architecture { mlp, rnn, gtn_lite };

inline std::string_view to_string(Architecture a) {
    switch (a) {
    case Architecture::mlp: return "mlp";
    case Architecture::rnn: return "rnn";
    case Architecture::gtn_lite: return "gtn_lite";
    }
    return "?";
}

inline Architecture parse_architecture(std::string_view s) {
    if (s == "mlp") return Architecture::mlp;
    if (s == "rnn") return Architecture::rnn;
    if (s == "gtn_lite") return Architecture::gtn_lite;
    throw ConfigurationError("unknown architecture '" + std::string(s) + "' (expected mlp, rnn or gtn_lite)");
}

/**
 * Column roles of the frame a model consumes plus the graph the gtn_lite
 * encoder pools onto. Variables map to graph cells by station id; a station
 * that is not a cell (the basin-wide rain gauge) feeds every non-boundary cell.
 */
struct ModelLayout {
    ts::WindowConfig window;
    std::vector<ts::VariableSpec> specs;
    std::vector<std::size_t> level_cols, cov_cols, ctrl_cols;
    std::vector<std::string> cells;
    Array adjacency;  ///< [cells, cells]
    Array pool;       ///< [cells, V], row-normalized variable-to-cell membership
    Array cov_scatter; ///< [V, C], places covariate features at their variable slot

    std::size_t V() const { return specs.size(); }
    std::size_t C() const { return cov_cols.size(); }
    std::size_t S() const { return ctrl_cols.size(); }
    std::size_t N() const { return level_cols.size(); }
    std::size_t w() const { return window.w; }
    std::size_t k() const { return window.k; }

    std::vector<std::string> names(const std::vector<std::size_t>& cols) const {
        std::vector<std::string> out;
        for (auto c : cols) out.push_back(specs[c].name);
        return out;
    }

    void check_sample(const ts::WindowSample& s) const {
        const auto bad = [](const char* what, const Mat& m, std::size_t r, std::size_t c) {
            return static_cast<std::size_t>(m.rows()) != r || static_cast<std::size_t>(m.cols()) != c
                       ? std::string(what) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                             ", expected " + std::to_string(r) + "x" + std::to_string(c)
                       : std::string();
        };
        for (const auto& msg : {bad("past", s.past, w(), V()), bad("future_cov", s.future_cov, k(), C()),
                                bad("future_controls", s.future_controls, k(), S())})
            if (!msg.empty()) throw StructuralError(msg);
    }
};

inline ModelLayout make_layout(const std::vector<ts::VariableSpec>& specs, const hydro::NetworkTopology& topo,
                               ts::WindowConfig window) {
    window.validate();
    ModelLayout L;
    L.window = window;
    L.specs = specs;
    for (std::size_t j = 0; j < specs.size(); ++j) {
        if (specs[j].role == ts::Role::water_level) L.level_cols.push_back(j);
        if (ts::is_covariate(specs[j].role)) L.cov_cols.push_back(j);
        if (ts::is_control(specs[j].role)) L.ctrl_cols.push_back(j);
    }
    if (L.level_cols.empty()) throw ConfigurationError("model layout needs at least one water-level variable");
    const std::size_t n = topo.cells.size(), V = specs.size();
    for (const auto& c : topo.cells) L.cells.push_back(c.id);
    L.adjacency = Array({n, n});
    const auto adj = topo.adjacency();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) L.adjacency.data[i * n + j] = adj[i][j];

    L.pool = Array({n, V});
    for (std::size_t v = 0; v < V; ++v) {
        int cell = -1;
        for (std::size_t c = 0; c < n; ++c)
            if (topo.cells[c].id == specs[v].station) cell = static_cast<int>(c);
        if (cell >= 0) {
            L.pool.data[static_cast<std::size_t>(cell) * V + v] = 1.0;
        } else {
            for (std::size_t c = 0; c < n; ++c)
                if (static_cast<int>(c) != topo.boundary) L.pool.data[c * V + v] = 1.0;
        }
    }
    for (std::size_t c = 0; c < n; ++c) {
        double s = 0.0;
        for (std::size_t v = 0; v < V; ++v) s += L.pool.data[c * V + v];
        if (s > 0.0)
            for (std::size_t v = 0; v < V; ++v) L.pool.data[c * V + v] /= s;
    }
    L.cov_scatter = Array({V, L.C()});
    for (std::size_t i = 0; i < L.C(); ++i) L.cov_scatter.data[L.cov_cols[i] * L.C() + i] = 1.0;
    return L;
}

inline json layout_to_json(const ModelLayout& L) {
    json specs = json::array();
    for (const auto& s : L.specs)
        specs.push_back({{"name", s.name}, {"role", ts::to_string(s.role)}, {"station", s.station}, {"unit", ts::to_string(s.unit)}});
    return {{"w", L.window.w},
            {"k", L.window.k},
            {"stride", L.window.stride},
            {"variables", specs},
            {"cells", L.cells},
            {"adjacency", L.adjacency.data},
            {"pool", L.pool.data}};
}

inline ModelLayout layout_from_json(const json& j) {
    try {
        ModelLayout L;
        L.window = {j.at("w").get<std::size_t>(), j.at("k").get<std::size_t>(), j.at("stride").get<std::size_t>()};
        for (const auto& s : j.at("variables"))
            L.specs.push_back({s.at("name").get<std::string>(), ts::parse_role(s.at("role").get<std::string>()),
                               s.at("station").get<std::string>(), ts::parse_unit(s.at("unit").get<std::string>())});
        for (std::size_t v = 0; v < L.specs.size(); ++v) {
            if (L.specs[v].role == ts::Role::water_level) L.level_cols.push_back(v);
            if (ts::is_covariate(L.specs[v].role)) L.cov_cols.push_back(v);
            if (ts::is_control(L.specs[v].role)) L.ctrl_cols.push_back(v);
        }
        L.cells = j.at("cells").get<std::vector<std::string>>();
        const std::size_t n = L.cells.size(), V = L.specs.size();
        L.adjacency = Array({n, n}, j.at("adjacency").get<std::vector<double>>());
        L.pool = Array({n, V}, j.at("pool").get<std::vector<double>>());
        L.cov_scatter = Array({V, L.C()});
        for (std::size_t i = 0; i < L.C(); ++i) L.cov_scatter.data[L.cov_cols[i] * L.C() + i] = 1.0;
        return L;
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad model layout: ") + e.what());
    }
}

inline json norm_to_json(const ts::NormParams& p) { return {{"mean", p.mean}, {"scale", p.scale}}; }

inline ts::NormParams norm_from_json(const json& j) {
    ts::NormParams p;
    p.mean = j.at("mean").get<std::vector<double>>();
    p.scale = j.at("scale").get<std::vector<double>>();
    return p;
}

// ---------------------------------------------------------------------------
// Normalized batches

/// Model-space copies of window samples, stacked along a leading batch axis.
struct Batch {
    Tensor past;   ///< [B, w, V]
    Tensor cov;    ///< [B, k, C]
    Tensor ctrl;   ///< [B, k, S]
    Tensor target; ///< [B, k, N], normalized levels (empty when unknown)
    std::size_t size = 0;
};

class BatchBuilder {
public:
    BatchBuilder(const ModelLayout& layout, const ts::NormParams& norm) : L_(&layout), norm_(&norm) {
        if (norm.mean.size() != layout.V() || norm.scale.size() != layout.V())
            throw StructuralError("normalization has " + std::to_string(norm.mean.size()) + " columns, layout has " +
                                  std::to_string(layout.V()));
    }

    double to_model(std::size_t col, double v) const { return (v - norm_->mean[col]) / norm_->scale[col]; }

    /// Raw-unit blocks in, normalized batch out. `ctrl` may be empty for the manager.
    Batch make(const std::vector<const Mat*>& past, const std::vector<const Mat*>& cov,
               const std::vector<const Mat*>& ctrl, const std::vector<const Mat*>& target = {}) const {
        const auto& L = *L_;
        const std::size_t B = past.size();
        Batch b;
        b.size = B;
        Array p({B, L.w(), L.V()}), c({B, L.k(), L.C()});
        for (std::size_t i = 0; i < B; ++i) {
            if (static_cast<std::size_t>(past[i]->rows()) != L.w() || static_cast<std::size_t>(past[i]->cols()) != L.V())
                throw StructuralError("past block is " + std::to_string(past[i]->rows()) + "x" +
                                      std::to_string(past[i]->cols()) + ", expected " + std::to_string(L.w()) + "x" +
                                      std::to_string(L.V()));
            if (static_cast<std::size_t>(cov[i]->rows()) != L.k() || static_cast<std::size_t>(cov[i]->cols()) != L.C())
                throw StructuralError("future covariate block is " + std::to_string(cov[i]->rows()) + "x" +
                                      std::to_string(cov[i]->cols()) + ", expected " + std::to_string(L.k()) + "x" +
                                      std::to_string(L.C()));
            for (std::size_t t = 0; t < L.w(); ++t)
                for (std::size_t v = 0; v < L.V(); ++v)
                    p.data[(i * L.w() + t) * L.V() + v] = to_model(v, (*past[i])(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v)));
            for (std::size_t t = 0; t < L.k(); ++t)
                for (std::size_t j = 0; j < L.C(); ++j)
                    c.data[(i * L.k() + t) * L.C() + j] =
                        to_model(L.cov_cols[j], (*cov[i])(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)));
        }
        b.past = Tensor::constant(std::move(p));
        b.cov = Tensor::constant(std::move(c));
        if (!ctrl.empty()) b.ctrl = Tensor::constant(controls(ctrl));
        if (!target.empty()) {
            Array y({B, L.k(), L.N()});
            for (std::size_t i = 0; i < B; ++i)
                for (std::size_t t = 0; t < L.k(); ++t)
                    for (std::size_t n = 0; n < L.N(); ++n)
                        y.data[(i * L.k() + t) * L.N() + n] = to_model(
                            L.level_cols[n], (*target[i])(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)));
            b.target = Tensor::constant(std::move(y));
        }
        return b;
    }

    /// Schedules in model space ([B, k, S]); controls are never rescaled.
    Array controls(const std::vector<const Mat*>& ctrl) const {
        const auto& L = *L_;
        Array a({ctrl.size(), L.k(), L.S()});
        for (std::size_t i = 0; i < ctrl.size(); ++i) {
            if (static_cast<std::size_t>(ctrl[i]->rows()) != L.k() || static_cast<std::size_t>(ctrl[i]->cols()) != L.S())
                throw StructuralError("schedule is " + std::to_string(ctrl[i]->rows()) + "x" +
                                      std::to_string(ctrl[i]->cols()) + ", expected " + std::to_string(L.k()) + "x" +
                                      std::to_string(L.S()));
            for (std::size_t t = 0; t < L.k(); ++t)
                for (std::size_t s = 0; s < L.S(); ++s)
                    a.data[(i * L.k() + t) * L.S() + s] = (*ctrl[i])(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(s));
        }
        return a;
    }

    Batch make(const std::vector<const ts::WindowSample*>& samples, bool with_target = true) const {
        std::vector<const Mat*> p, c, u, y;
        for (const auto* s : samples) {
            p.push_back(&s->past);
            c.push_back(&s->future_cov);
            u.push_back(&s->future_controls);
            if (with_target) y.push_back(&s->future_water);
        }
        return make(p, c, u, y);
    }

    /// Per-level-column affine map from model space back to ft.
    std::pair<std::vector<double>, std::vector<double>> level_affine() const {
        std::vector<double> mul, add;
        for (auto c : L_->level_cols) {
            mul.push_back(norm_->scale[c]);
            add.push_back(norm_->mean[c]);
        }
        return {mul, add};
    }

private:
    const ModelLayout* L_;
    const ts::NormParams* norm_;
};

/// [B, k, N] array to one k x N matrix per sample.
inline std::vector<Mat> split_batch(const Array& a) {
    const std::size_t B = a.dim(0), k = a.dim(1), n = a.dim(2);
    std::vector<Mat> out(B, Mat(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)));
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < n; ++j)
                out[i](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = a.data[(i * k + t) * n + j];
    return out;
}

} // namespace fidlar::models
