#pragma once

#include "../ad/serialize.hpp"
#include "networks.hpp"

#include <fstream>
#include <memory>
#include <optional>

namespace fidlar::models {

struct Prediction {
    Mat levels;                   ///< [k x N], ft
    std::optional<Mat> attention; ///< [V x V] for gtn_lite
};

/**
 * Flood evaluator: (past window, covariate forecast, schedule) -> levels.
 *
 * Copies are handles onto the same parameters; use clone() for an
 * independent model. Inputs and outputs are in raw units; normalization is
 * internal and travels with the artifact.
 */
class EvaluatorModel {
public:
    static EvaluatorModel build(const NetConfig& cfg, ModelLayout layout, ts::NormParams norm, std::uint64_t seed) {
        cfg.validate();
        auto st = std::make_shared<State>();
        st->layout = std::move(layout);
        st->norm = std::move(norm);
        st->cfg = cfg;
        st->seed = seed;
        Rng rng(seed);
        st->bind(&rng);
        return EvaluatorModel(std::move(st));
    }

    /// Rebuilds from a parameter set whose names and shapes match `cfg`/`layout`.
    static EvaluatorModel from_params(const NetConfig& cfg, ModelLayout layout, ts::NormParams norm, ad::ParamSet ps,
                                      std::uint64_t seed) {
        auto st = std::make_shared<State>();
        st->layout = std::move(layout);
        st->norm = std::move(norm);
        st->cfg = cfg;
        st->seed = seed;
        st->params = std::move(ps);
        st->bind(nullptr);
        return EvaluatorModel(std::move(st));
    }

    EvaluatorModel clone() const {
        return from_params(st_->cfg, st_->layout, st_->norm, st_->params.clone(), st_->seed).with_meta(st_->meta);
    }

    Architecture arch() const { return st_->cfg.arch; }
    const NetConfig& config() const { return st_->cfg; }
    const ModelLayout& layout() const { return st_->layout; }
    const ts::NormParams& norm() const { return st_->norm; }
    std::uint64_t seed() const { return st_->seed; }
    ad::ParamSet& params() { return st_->params; }
    const ad::ParamSet& params() const { return st_->params; }
    BatchBuilder batcher() const { return BatchBuilder(st_->layout, st_->norm); }
    json& meta() { return st_->meta; }
    const json& meta() const { return st_->meta; }

    void freeze() { st_->params.freeze(); }
    bool frozen() const { return st_->params.frozen(); }

    Encoded encode(const Tensor& past, const Tensor& cov) const { return st_->encoder(past, cov); }
    Tensor decode(const Encoded& e, const Tensor& cov, const Tensor& ctrl) const { return st_->decoder(e, cov, ctrl); }

    /// Levels in model space, [B, k, N].
    Tensor forward(const Batch& b) const { return decode(encode(b.past, b.cov), b.cov, b.ctrl); }

    /// Model-space levels to ft (differentiable).
    Tensor to_ft(const Tensor& levels) const {
        const auto [mul, add] = batcher().level_affine();
        return ad::affine_last(levels, mul, add);
    }

    Prediction predict(const Mat& past, const Mat& future_cov, const Mat& schedule) const {
        ad::NoGradGuard ng;
        const auto bb = batcher();
        const Batch b = bb.make({&past}, {&future_cov}, {&schedule});
        const Encoded e = encode(b.past, b.cov);
        const Tensor y = to_ft(decode(e, b.cov, b.ctrl));
        Prediction p;
        p.levels = split_batch(y.value())[0];
        if (e.attention.defined()) {
            const auto V = layout().V();
            Mat a(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(V));
            for (std::size_t i = 0; i < V * V; ++i) a.data()[i] = e.attention.value().data[i];
            p.attention = a;
        }
        return p;
    }

    Prediction predict(const ts::WindowSample& s) const {
        layout().check_sample(s);
        return predict(s.past, s.future_cov, s.future_controls);
    }

    /// Batched inference in ft; one k x N matrix per sample.
    std::vector<Mat> predict_batch(const std::vector<const ts::WindowSample*>& samples) const {
        ad::NoGradGuard ng;
        if (samples.empty()) return {};
        const Batch b = batcher().make(samples, false);
        return split_batch(to_ft(forward(b)).value());
    }

    // -- persistence: <path> holds parameters, <path>.json the sidecar

    void save(const std::string& path) const {
        ad::save_params(path, st_->params);
        json side = st_->meta;
        side["kind"] = "evaluator";
        side["network"] = net_config_to_json(st_->cfg);
        side["layout"] = layout_to_json(st_->layout);
        side["normalization"] = norm_to_json(st_->norm);
        side["seed"] = st_->seed;
        std::ofstream out(path + ".json");
        if (!out) throw ConfigurationError("cannot write " + path + ".json");
        out << side.dump(2) << '\n';
    }

    static EvaluatorModel load(const std::string& path) {
        std::ifstream in(path + ".json");
        if (!in) throw ConfigurationError("missing model sidecar " + path + ".json");
        json side;
        try {
            side = json::parse(in);
        } catch (const json::exception& e) {
            throw IngestionError(path + ".json: " + e.what());
        }
        if (side.value("kind", "") != "evaluator") throw IngestionError(path + " is not an evaluator artifact");
        auto m = from_params(net_config_from_json(side.at("network")), layout_from_json(side.at("layout")),
                             norm_from_json(side.at("normalization")), ad::load_params(path),
                             side.value("seed", std::uint64_t{0}));
        m.st_->meta = side;
        return m;
    }

private:
    struct State {
        ModelLayout layout;
        ts::NormParams norm;
        NetConfig cfg;
        std::uint64_t seed = 0;
        ad::ParamSet params;
        Encoder encoder;
        EvaluatorDecoder decoder;
        json meta = json::object();

        void bind(Rng* rng) {
            detail::LayerFactory f(params, rng);
            encoder = Encoder(f, "enc", layout, cfg);
            decoder = EvaluatorDecoder(f, "dec", layout, cfg, encoder.dim());
        }
    };

    explicit EvaluatorModel(std::shared_ptr<State> st) : st_(std::move(st)) {}
    EvaluatorModel with_meta(json m) && {
        st_->meta = std::move(m);
        return std::move(*this);
    }

    std::shared_ptr<State> st_;
};

} // namespace fidlar::models
