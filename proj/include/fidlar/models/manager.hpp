#pragma once

#include "../ad/optim.hpp"
#include "evaluator.hpp"
#include "losses.hpp"
#include "train_evaluator.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>

namespace fidlar::models {

/**
 * Flood manager: (past window, covariate forecast) -> k-hour schedule in [0,1].
 *
 * Same handle semantics as EvaluatorModel. The layout must match the
 * evaluator it is trained against so schedules feed straight into it.
 */
class ManagerModel {
public:
    static ManagerModel build(const NetConfig& cfg, ModelLayout layout, ts::NormParams norm, std::uint64_t seed,
                              double initial_bias = -1.0) {
        cfg.validate();
        auto st = std::make_shared<State>();
        st->layout = std::move(layout);
        st->norm = std::move(norm);
        st->cfg = cfg;
        st->seed = seed;
        st->initial_bias = initial_bias;
        Rng rng(seed);
        st->bind(&rng);
        return ManagerModel(std::move(st));
    }

    static ManagerModel from_params(const NetConfig& cfg, ModelLayout layout, ts::NormParams norm, ad::ParamSet ps,
                                    std::uint64_t seed, double initial_bias = -1.0) {
        auto st = std::make_shared<State>();
        st->layout = std::move(layout);
        st->norm = std::move(norm);
        st->cfg = cfg;
        st->seed = seed;
        st->initial_bias = initial_bias;
        st->params = std::move(ps);
        st->bind(nullptr);
        return ManagerModel(std::move(st));
    }

    ManagerModel clone() const {
        auto m = from_params(st_->cfg, st_->layout, st_->norm, st_->params.clone(), st_->seed, st_->initial_bias);
        m.st_->meta = st_->meta;
        return m;
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

    /// Schedules [B, k, S] in [0,1].
    Tensor forward(const Batch& b) const { return st_->decoder(st_->encoder(b.past, b.cov), b.cov); }

    Mat suggest_schedule(const Mat& past, const Mat& future_cov) const {
        ad::NoGradGuard ng;
        const Batch b = batcher().make({&past}, {&future_cov}, {});
        return split_batch(forward(b).value())[0];
    }

    std::vector<Mat> suggest_batch(const std::vector<const ts::WindowSample*>& samples) const {
        ad::NoGradGuard ng;
        if (samples.empty()) return {};
        std::vector<const Mat*> p, c;
        for (const auto* s : samples) {
            p.push_back(&s->past);
            c.push_back(&s->future_cov);
        }
        return split_batch(forward(batcher().make(p, c, {})).value());
    }

    std::vector<Mat> suggest_all(const std::vector<ts::WindowSample>& samples, std::size_t chunk = 256) const {
        std::vector<Mat> out;
        out.reserve(samples.size());
        for (std::size_t i = 0; i < samples.size(); i += chunk) {
            std::vector<const ts::WindowSample*> ptrs;
            for (std::size_t j = i; j < std::min(samples.size(), i + chunk); ++j) ptrs.push_back(&samples[j]);
            for (auto& m : suggest_batch(ptrs)) out.push_back(std::move(m));
        }
        return out;
    }

    void save(const std::string& path) const {
        ad::save_params(path, st_->params);
        json side = st_->meta;
        side["kind"] = "manager";
        side["network"] = net_config_to_json(st_->cfg);
        side["layout"] = layout_to_json(st_->layout);
        side["normalization"] = norm_to_json(st_->norm);
        side["seed"] = st_->seed;
        side["initial_bias"] = st_->initial_bias;
        std::ofstream out(path + ".json");
        if (!out) throw ConfigurationError("cannot write " + path + ".json");
        out << side.dump(2) << '\n';
    }

    static ManagerModel load(const std::string& path) {
        std::ifstream in(path + ".json");
        if (!in) throw ConfigurationError("missing model sidecar " + path + ".json");
        json side;
        try {
            side = json::parse(in);
        } catch (const json::exception& e) {
            throw IngestionError(path + ".json: " + e.what());
        }
        if (side.value("kind", "") != "manager") throw IngestionError(path + " is not a manager artifact");
        auto m = from_params(net_config_from_json(side.at("network")), layout_from_json(side.at("layout")),
                             norm_from_json(side.at("normalization")), ad::load_params(path),
                             side.value("seed", std::uint64_t{0}), side.value("initial_bias", -1.0));
        m.st_->meta = side;
        return m;
    }

private:
    struct State {
        ModelLayout layout;
        ts::NormParams norm;
        NetConfig cfg;
        std::uint64_t seed = 0;
        double initial_bias = -1.0;
        ad::ParamSet params;
        Encoder encoder;
        ManagerDecoder decoder;
        json meta = json::object();

        void bind(Rng* rng) {
            detail::LayerFactory f(params, rng);
            encoder = Encoder(f, "enc", layout, cfg);
            decoder = ManagerDecoder(f, "dec", layout, cfg, encoder.dim(), initial_bias);
        }
    };

    explicit ManagerModel(std::shared_ptr<State> st) : st_(std::move(st)) {}

    std::shared_ptr<State> st_;
};

inline void check_compatible(const ManagerModel& m, const EvaluatorModel& e) {
    const auto& a = m.layout();
    const auto& b = e.layout();
    if (a.w() != b.w() || a.k() != b.k() || a.V() != b.V() || a.S() != b.S() || a.N() != b.N())
        throw StructuralError("manager and evaluator layouts differ (w/k/V/S/N " + std::to_string(a.w()) + "/" +
                              std::to_string(a.k()) + "/" + std::to_string(a.V()) + "/" + std::to_string(a.S()) + "/" +
                              std::to_string(a.N()) + " vs " + std::to_string(b.w()) + "/" + std::to_string(b.k()) +
                              "/" + std::to_string(b.V()) + "/" + std::to_string(b.S()) + "/" + std::to_string(b.N()) + ")");
}

// ---------------------------------------------------------------------------
// Scoring schedules through a frozen evaluator

struct ScheduleLoss {
    double flood = 0.0;    ///< L1
    double waste = 0.0;    ///< L2
    double combined = 0.0;
};

/// Per-sample losses of `schedules` as judged by the evaluator.
inline std::vector<ScheduleLoss> schedule_losses(const EvaluatorModel& ev, const std::vector<ts::WindowSample>& samples,
                                                 const std::vector<Mat>& schedules, const Thresholds& th,
                                                 const LossWeights& w, std::size_t chunk = 256) {
    if (schedules.size() != samples.size())
        throw StructuralError("schedule_losses: " + std::to_string(schedules.size()) + " schedules for " +
                              std::to_string(samples.size()) + " samples");
    ad::NoGradGuard ng;
    std::vector<ScheduleLoss> out;
    out.reserve(samples.size());
    const auto bb = ev.batcher();
    for (std::size_t i = 0; i < samples.size(); i += chunk) {
        std::vector<const Mat*> p, c, u;
        for (std::size_t j = i; j < std::min(samples.size(), i + chunk); ++j) {
            p.push_back(&samples[j].past);
            c.push_back(&samples[j].future_cov);
            u.push_back(&schedules[j]);
        }
        for (const auto& lv : split_batch(ev.to_ft(ev.forward(bb.make(p, c, u))).value())) {
            ScheduleLoss l{flood_loss(lv, th), wastage_loss(lv, th), 0.0};
            l.combined = combined_loss(l.flood, l.waste, w);
            out.push_back(l);
        }
    }
    return out;
}

inline ScheduleLoss mean_loss(const std::vector<ScheduleLoss>& v) {
    ScheduleLoss m;
    for (const auto& l : v) {
        m.flood += l.flood;
        m.waste += l.waste;
        m.combined += l.combined;
    }
    const double n = static_cast<double>(std::max<std::size_t>(v.size(), 1));
    m.flood /= n;
    m.waste /= n;
    m.combined /= n;
    return m;
}

// ---------------------------------------------------------------------------
// Training through the frozen evaluator

struct ManagerTrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr = 2e-3;
    std::uint64_t seed = 11;
    std::size_t patience = 5;
    double clip_norm = 1.0;
    std::size_t max_steps = 0; ///< optimizer steps in total; 0 = no cap

    void validate() const {
        if (batch_size == 0) throw ConfigurationError("batch size must be positive");
        if (!(lr > 0.0)) throw ConfigurationError("learning rate must be positive");
        if (patience == 0) throw ConfigurationError("early-stop patience must be positive");
    }
};

inline json manager_train_config_to_json(const ManagerTrainConfig& c) {
    return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"seed", c.seed},
            {"patience", c.patience}, {"clip_norm", c.clip_norm}, {"max_steps", c.max_steps}};
}

inline ManagerTrainConfig manager_train_config_from_json(const json& j, ManagerTrainConfig c = {}) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.validate();
    return c;
}

struct ManagerEpoch {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    ScheduleLoss train; ///< per-sample means over the epoch's batches
    ScheduleLoss val;
    double seconds = 0.0;
};

struct ManagerHistory {
    std::vector<ManagerEpoch> epochs;
    std::size_t best_epoch = 0;
    double best_val_loss = INFINITY;
    std::size_t steps = 0;
    std::uint64_t seed = 0;

    json to_json() const {
        const auto lj = [](const ScheduleLoss& l) {
            return json{{"flood", l.flood}, {"waste", l.waste}, {"combined", l.combined}};
        };
        json e = json::array();
        for (const auto& r : epochs)
            e.push_back({{"epoch", r.epoch}, {"steps", r.steps}, {"train", lj(r.train)}, {"val", lj(r.val)},
                         {"seconds", r.seconds}});
        return {{"epochs", e}, {"best_epoch", best_epoch}, {"best_val_loss", best_val_loss}, {"steps", steps},
                {"seed", seed}};
    }
};

/// Evaluator encodings of a fixed sample list. The encoder never sees the
/// schedule, so with the evaluator frozen these are constants for training.
struct EncodingCache {
    Array context;    ///< [n, D]
    Array last_level; ///< [n, N]

    Encoded gather(const std::vector<std::size_t>& idx) const {
        const std::size_t D = context.dim(1), N = last_level.dim(1), B = idx.size();
        Array c({B, D}), l({B, N});
        for (std::size_t i = 0; i < B; ++i) {
            std::copy_n(context.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * D), D, c.data.begin() + static_cast<std::ptrdiff_t>(i * D));
            std::copy_n(last_level.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * N), N, l.data.begin() + static_cast<std::ptrdiff_t>(i * N));
        }
        return {Tensor::constant(std::move(c)), Tensor::constant(std::move(l)), {}};
    }
};

inline EncodingCache cache_encodings(const EvaluatorModel& ev, const std::vector<ts::WindowSample>& samples,
                                     std::size_t chunk = 256) {
    ad::NoGradGuard ng;
    EncodingCache cache;
    const auto bb = ev.batcher();
    std::vector<double> ctx, last;
    std::size_t D = 0;
    for (std::size_t i = 0; i < samples.size(); i += chunk) {
        std::vector<const ts::WindowSample*> ptrs;
        for (std::size_t j = i; j < std::min(samples.size(), i + chunk); ++j) ptrs.push_back(&samples[j]);
        const Batch b = bb.make(ptrs, false);
        const Encoded e = ev.encode(b.past, b.cov);
        D = e.context.dim(1);
        ctx.insert(ctx.end(), e.context.value().data.begin(), e.context.value().data.end());
        last.insert(last.end(), e.last_level.value().data.begin(), e.last_level.value().data.end());
    }
    cache.context = Array({samples.size(), D}, std::move(ctx));
    cache.last_level = Array({samples.size(), ev.layout().N()}, std::move(last));
    return cache;
}

namespace detail {

/// Sums of L1 and L2 over a batch, as graph nodes.
inline std::pair<Tensor, Tensor> batch_losses(const ManagerModel& m, const EvaluatorModel& ev, const EncodingCache& cache,
                                              const std::vector<ts::WindowSample>& samples,
                                              const std::vector<std::size_t>& idx, const Thresholds& th) {
    std::vector<const ts::WindowSample*> ptrs;
    for (auto i : idx) ptrs.push_back(&samples[i]);
    const Batch b = m.batcher().make(ptrs, false);
    const Tensor schedule = m.forward(b);
    const Tensor levels = ev.to_ft(ev.decode(cache.gather(idx), b.cov, schedule));
    return {flood_loss(levels, th), wastage_loss(levels, th)};
}

inline ScheduleLoss cached_val_loss(const ManagerModel& m, const EvaluatorModel& ev, const EncodingCache& cache,
                                    const std::vector<ts::WindowSample>& samples, const Thresholds& th,
                                    const LossWeights& w, std::size_t chunk = 256) {
    ad::NoGradGuard ng;
    ScheduleLoss s;
    for (std::size_t i = 0; i < samples.size(); i += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t j = i; j < std::min(samples.size(), i + chunk); ++j) idx.push_back(j);
        const auto [l1, l2] = batch_losses(m, ev, cache, samples, idx, th);
        s.flood += l1.item();
        s.waste += l2.item();
    }
    const double n = static_cast<double>(std::max<std::size_t>(samples.size(), 1));
    s.flood /= n;
    s.waste /= n;
    s.combined = combined_loss(s.flood, s.waste, w);
    return s;
}

} // namespace detail

/**
 * Trains the manager by backpropagating the combined flood/wastage loss of
 * the evaluator's predicted levels into the manager. Only the manager is
 * stepped; the evaluator must be frozen. The loss is the per-sample mean of
 * the combined loss. Validation combined loss selects the returned
 * parameters.
 */
inline ManagerHistory train_manager(ManagerModel& manager, const EvaluatorModel& evaluator,
                                    const std::vector<ts::WindowSample>& train, const std::vector<ts::WindowSample>& val,
                                    const Thresholds& th, const LossWeights& weights, const ManagerTrainConfig& cfg) {
    cfg.validate();
    weights.validate();
    th.validate(evaluator.layout().N());
    if (!evaluator.frozen()) throw ContractViolation("train_manager: evaluator must be frozen before manager training");
    check_compatible(manager, evaluator);
    ManagerHistory hist;
    hist.seed = cfg.seed;
    if (cfg.epochs == 0 || train.empty()) return hist;

    const EncodingCache train_cache = cache_encodings(evaluator, train);
    const auto& scored = val.empty() ? train : val;
    const EncodingCache val_cache = val.empty() ? train_cache : cache_encodings(evaluator, val);

    Rng rng(cfg.seed);
    ad::Adam opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
    auto& ps = manager.params();
    ad::ParamSet best = ps.clone();
    std::size_t bad_epochs = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.max_steps && hist.steps >= cfg.max_steps) break;
        const auto t0 = std::chrono::steady_clock::now();
        const auto order = shuffled_indices(train.size(), rng);
        ManagerEpoch rec;
        rec.epoch = epoch;
        std::size_t seen = 0;
        for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
            if (cfg.max_steps && hist.steps >= cfg.max_steps) break;
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(i),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + cfg.batch_size)));
            ps.zero_grad();
            const auto [l1, l2] = detail::batch_losses(manager, evaluator, train_cache, train, idx, th);
            const Tensor loss = ad::scale(combined_loss(l1, l2, weights), 1.0 / static_cast<double>(idx.size()));
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw DivergenceError("manager training diverged at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(hist.steps) + " (L1 " + std::to_string(l1.item()) + ", L2 " +
                                      std::to_string(l2.item()) + ", lr " + std::to_string(cfg.lr) + ")");
            loss.backward();
            opt.step(ps);
            ++hist.steps;
            ++rec.steps;
            rec.train.flood += l1.item();
            rec.train.waste += l2.item();
            seen += idx.size();
        }
        const double n = static_cast<double>(std::max<std::size_t>(seen, 1));
        rec.train.flood /= n;
        rec.train.waste /= n;
        rec.train.combined = combined_loss(rec.train.flood, rec.train.waste, weights);
        rec.val = detail::cached_val_loss(manager, evaluator, val_cache, scored, th, weights);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);
        if (rec.val.combined < hist.best_val_loss) {
            hist.best_val_loss = rec.val.combined;
            hist.best_epoch = epoch;
            best.load_values(ps);
            bad_epochs = 0;
        } else if (++bad_epochs >= cfg.patience) {
            break;
        }
    }
    ps.load_values(best);
    ps.zero_grad();
    return hist;
}

} // namespace fidlar::models
