#pragma once

#include "layers.hpp"

#include <cmath>
#include <map>

namespace fidlar::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0; ///< global gradient-norm clip; 0 disables
};

/// Adam with bias correction. Refuses to touch a frozen ParamSet.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    long steps() const { return t_; }

    /// Applies one update from the accumulated gradients; returns the pre-clip gradient norm.
    double step(ParamSet& params) {
        if (params.frozen())
            throw ContractViolation("optimizer step attempted on a frozen parameter set");
        double sq = 0.0;
        for (const auto& [_, p] : params)
            if (p.has_grad())
                for (double g : p.node()->grad) sq += g * g;
        const double norm = std::sqrt(sq);
        const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (const auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            auto& st = state_[name];
            const auto& g = p.node()->grad;
            auto& x = p.node()->value.data;
            if (st.m.empty()) {
                st.m.assign(x.size(), 0.0);
                st.v.assign(x.size(), 0.0);
            }
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double gi = g[i] * clip;
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
                x[i] -= cfg_.lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + cfg_.eps);
            }
        }
        return norm;
    }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    long t_ = 0;
    std::map<std::string, Moments> state_;
};

} // namespace fidlar::ad
