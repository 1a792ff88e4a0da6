#pragma once

#include "../ad/optim.hpp"
#include "../bench/metrics.hpp"
#include "evaluator.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace fidlar::models {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 2e-3;
    std::uint64_t seed = 7;
    std::size_t patience = 5;
    double clip_norm = 1.0;
    std::size_t max_batches_per_epoch = 0; ///< 0 = full pass

    void validate() const {
        if (batch_size == 0) throw ConfigurationError("batch size must be positive");
        if (!(lr > 0.0)) throw ConfigurationError("learning rate must be positive");
        if (patience == 0) throw ConfigurationError("early-stop patience must be positive");
    }
};

inline json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"seed", c.seed},
            {"patience", c.patience}, {"clip_norm", c.clip_norm}, {"max_batches_per_epoch", c.max_batches_per_epoch}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.max_batches_per_epoch = j.value("max_batches_per_epoch", c.max_batches_per_epoch);
    c.validate();
    return c;
}

struct EvaluatorEpoch {
    std::size_t epoch = 0;
    double train_mse = 0.0; ///< model space
    double val_mae = 0.0;   ///< ft
    double val_rmse = 0.0;  ///< ft
    double seconds = 0.0;
};

struct EvaluatorHistory {
    std::vector<EvaluatorEpoch> epochs;
    std::size_t best_epoch = 0;
    double best_val_mae = INFINITY;
    double persistence_mae = 0.0;
    std::uint64_t seed = 0;

    json to_json() const {
        json e = json::array();
        for (const auto& r : epochs)
            e.push_back({{"epoch", r.epoch}, {"train_mse", r.train_mse}, {"val_mae_ft", r.val_mae},
                         {"val_rmse_ft", r.val_rmse}, {"seconds", r.seconds}});
        return {{"epochs", e}, {"best_epoch", best_epoch}, {"best_val_mae_ft", best_val_mae},
                {"persistence_mae_ft", persistence_mae}, {"seed", seed}};
    }
};

/// Forecast that repeats the last observed level over the horizon.
inline Mat persistence_forecast(const ts::WindowSample& s, const ModelLayout& L) {
    Mat out(static_cast<Eigen::Index>(L.k()), static_cast<Eigen::Index>(L.N()));
    for (std::size_t n = 0; n < L.N(); ++n)
        out.col(static_cast<Eigen::Index>(n)).setConstant(
            s.past(static_cast<Eigen::Index>(L.w() - 1), static_cast<Eigen::Index>(L.level_cols[n])));
    return out;
}

inline bench::AccuracyMetrics persistence_accuracy(const std::vector<ts::WindowSample>& samples, const ModelLayout& L) {
    std::vector<Mat> pred, truth;
    for (const auto& s : samples) {
        pred.push_back(persistence_forecast(s, L));
        truth.push_back(s.future_water);
    }
    return bench::accuracy_metrics(pred, truth);
}

/// Batched predictions for a whole sample list, in chunks.
inline std::vector<Mat> predict_all(const EvaluatorModel& model, const std::vector<ts::WindowSample>& samples,
                                    std::size_t chunk = 256) {
    std::vector<Mat> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); i += chunk) {
        std::vector<const ts::WindowSample*> ptrs;
        for (std::size_t j = i; j < std::min(samples.size(), i + chunk); ++j) ptrs.push_back(&samples[j]);
        for (auto& m : model.predict_batch(ptrs)) out.push_back(std::move(m));
    }
    return out;
}

inline bench::AccuracyMetrics evaluate_accuracy(const EvaluatorModel& model, const std::vector<ts::WindowSample>& samples) {
    std::vector<Mat> truth;
    truth.reserve(samples.size());
    for (const auto& s : samples) truth.push_back(s.future_water);
    return bench::accuracy_metrics(predict_all(model, samples), truth);
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
    }
    return idx;
}

/**
 * Minimizes MSE on normalized future levels with Adam. Validation MAE (ft)
 * drives early stopping; the best parameters are restored at the end.
 */
inline EvaluatorHistory train_evaluator(EvaluatorModel& model, const std::vector<ts::WindowSample>& train,
                                        const std::vector<ts::WindowSample>& val, const TrainConfig& cfg) {
    cfg.validate();
    if (model.frozen()) throw ContractViolation("train_evaluator: model is frozen");
    EvaluatorHistory hist;
    hist.seed = cfg.seed;
    if (!val.empty()) hist.persistence_mae = persistence_accuracy(val, model.layout()).mae;
    if (cfg.epochs == 0 || train.empty()) return hist;

    Rng rng(cfg.seed);
    ad::Adam opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
    const auto bb = model.batcher();
    auto& ps = model.params();
    ad::ParamSet best = ps.clone();
    std::size_t bad_epochs = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto idx = shuffled_indices(train.size(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t i = 0; i < idx.size(); i += cfg.batch_size) {
            if (cfg.max_batches_per_epoch && batches >= cfg.max_batches_per_epoch) break;
            std::vector<const ts::WindowSample*> ptrs;
            for (std::size_t j = i; j < std::min(idx.size(), i + cfg.batch_size); ++j) ptrs.push_back(&train[idx[j]]);
            const Batch b = bb.make(ptrs);
            ps.zero_grad();
            const Tensor loss = ad::mean(ad::square(model.forward(b) - b.target));
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw DivergenceError("evaluator training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batches) + " (loss " + std::to_string(lv) + ", lr " +
                                      std::to_string(cfg.lr) + ")");
            loss.backward();
            opt.step(ps);
            loss_sum += lv;
            ++batches;
        }
        EvaluatorEpoch rec;
        rec.epoch = epoch;
        rec.train_mse = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
        const auto& scored = val.empty() ? train : val;
        const auto acc = evaluate_accuracy(model, scored);
        rec.val_mae = acc.mae;
        rec.val_rmse = acc.rmse;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);
        if (rec.val_mae < hist.best_val_mae) {
            hist.best_val_mae = rec.val_mae;
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
