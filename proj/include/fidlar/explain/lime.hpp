#pragma once

#include "../error.hpp"
#include "../rng.hpp"
#include "../timeseries.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <functional>
#include <iostream>

namespace fidlar::explain {

struct LimeConfig {
    std::size_t n_perturb = 0;  ///< 0 = 10 per input cell
    double noise = 0.3;         ///< perturbation sd as a fraction of each cell's scale
    double kernel_width = 0.0;  ///< on the standardized perturbation; 0 = 0.75 sqrt(D)
    double ridge = 1e-6;
    std::size_t chunk = 512;
    std::uint64_t seed = 5;

    void validate() const {
        if (!(noise > 0.0)) throw ConfigurationError("LIME noise must be positive");
        if (kernel_width < 0.0) throw ConfigurationError("LIME kernel width must be >= 0");
        if (!(ridge > 0.0)) throw ConfigurationError("LIME ridge penalty must be positive");
        if (chunk == 0) throw ConfigurationError("LIME chunk must be positive");
    }
};

struct LimeFit {
    Eigen::VectorXd coef;  ///< output change per unit change of each input cell
    double intercept = 0.0; ///< surrogate value at the explained input
    double r2 = 0.0;       ///< kernel-weighted fit quality of the surrogate
    double ridge = 0.0;    ///< penalty actually used
    std::size_t samples = 0;
};

/// Scores a batch of inputs, one per row of the [n x D] matrix.
using ScalarBatchFn = std::function<Eigen::VectorXd(const Mat&)>;

/**
 * Local linear surrogate around `x0`. Each cell i is perturbed with
 * N(0, (noise * scale_i)^2); samples are weighted by exp(-d^2 / width^2)
 * where d is the norm of the perturbation in units of noise * scale.
 * Weighted ridge on the standardized perturbations, intercept unpenalized.
 * Cells with scale 0 are never perturbed and get coefficient 0.
 */
inline LimeFit lime(const ScalarBatchFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& scale, const LimeConfig& cfg) {
    cfg.validate();
    const auto D = x0.size();
    if (scale.size() != D) throw StructuralError("LIME scale has " + std::to_string(scale.size()) + " cells, input has " + std::to_string(D));
    if ((scale.array() < 0.0).any() || !scale.allFinite() || !x0.allFinite())
        throw ContractViolation("LIME needs a finite input and non-negative scales");
    const auto n = static_cast<Eigen::Index>(cfg.n_perturb ? cfg.n_perturb : 10 * static_cast<std::size_t>(D));
    const double width = cfg.kernel_width > 0.0 ? cfg.kernel_width : 0.75 * std::sqrt(static_cast<double>(D));

    Rng rng(cfg.seed);
    Mat U(n, D);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < D; ++c) U(r, c) = scale(c) > 0.0 ? normal(rng, 0.0, 1.0) : 0.0;
    const Eigen::VectorXd step = cfg.noise * scale;

    Eigen::VectorXd y(n);
    for (Eigen::Index r0 = 0; r0 < n; r0 += static_cast<Eigen::Index>(cfg.chunk)) {
        const Eigen::Index m = std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.chunk), n - r0);
        Mat X = (U.middleRows(r0, m).array().rowwise() * step.transpose().array()).matrix();
        X.rowwise() += x0.transpose();
        const Eigen::VectorXd out = f(X);
        if (out.size() != m) throw StructuralError("LIME model returned the wrong number of outputs");
        y.segment(r0, m) = out;
    }
    if (!y.allFinite()) throw ContractViolation("LIME model returned non-finite outputs");

    const Eigen::VectorXd wt = (-U.rowwise().squaredNorm().array() / (width * width)).exp().matrix();
    const double wsum = wt.sum();
    const Eigen::RowVectorXd umean = (wt.transpose() * U) / wsum;
    const double ymean = wt.dot(y) / wsum;
    const Eigen::VectorXd sw = wt.cwiseSqrt();
    const Mat Uc = (U.rowwise() - umean).array().colwise() * sw.array();
    const Eigen::VectorXd yc = (y.array() - ymean) * sw.array();
    const Mat G = Uc.transpose() * Uc;
    const Eigen::VectorXd b = Uc.transpose() * yc;

    LimeFit fit;
    fit.samples = static_cast<std::size_t>(n);
    double lambda = cfg.ridge;
    Eigen::VectorXd beta;
    for (int attempt = 0;; ++attempt) {
        Eigen::LDLT<Mat> ldlt(G + lambda * wsum * Mat::Identity(D, D));
        beta = ldlt.solve(b);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive() && beta.allFinite()) break;
        if (attempt == 8) throw ContractViolation("LIME regression stayed singular up to ridge " + std::to_string(lambda));
        lambda *= 10.0;
        std::cerr << "warning: LIME regression singular, raising ridge to " << lambda << '\n';
    }
    fit.ridge = lambda;
    for (Eigen::Index c = 0; c < D; ++c)
        if (scale(c) == 0.0) beta(c) = 0.0;
    const Eigen::VectorXd resid = yc - Uc * beta;
    const double tss = yc.squaredNorm();
    fit.r2 = tss > 0.0 ? 1.0 - resid.squaredNorm() / tss : (resid.squaredNorm() == 0.0 ? 1.0 : -INFINITY);
    fit.coef = Eigen::VectorXd::Zero(D);
    for (Eigen::Index c = 0; c < D; ++c)
        if (step(c) > 0.0) fit.coef(c) = beta(c) / step(c);
    fit.intercept = ymean - umean.dot(beta);
    return fit;
}

} // namespace fidlar::explain
