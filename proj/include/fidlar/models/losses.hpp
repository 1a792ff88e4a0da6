#pragma once

#include "../ad/ops.hpp"
#include "../thresholds.hpp"
#include "../timeseries.hpp"

#include <algorithm>

namespace fidlar::models {

struct LossWeights {
    double flood = 1.0;
    double waste = 0.1;

    void validate() const {
        if (flood < 0.0 || waste < 0.0) throw ConfigurationError("loss weights must be >= 0");
        if (flood == 0.0 && waste == 0.0) throw ConfigurationError("loss weights cannot both be zero");
    }
};

/// Sum of squared exceedances above each point's flood level; `levels` is [k x N] in ft.
inline double flood_loss(const Mat& levels, const Thresholds& th) {
    th.validate(static_cast<std::size_t>(levels.cols()));
    double s = 0.0;
    for (Eigen::Index j = 0; j < levels.rows(); ++j)
        for (Eigen::Index i = 0; i < levels.cols(); ++i) {
            const double e = std::max(levels(j, i) - th.flood[static_cast<std::size_t>(i)], 0.0);
            s += e * e;
        }
    return s;
}

/// Sum of squared shortfalls below each point's waste level.
inline double wastage_loss(const Mat& levels, const Thresholds& th) {
    th.validate(static_cast<std::size_t>(levels.cols()));
    double s = 0.0;
    for (Eigen::Index j = 0; j < levels.rows(); ++j)
        for (Eigen::Index i = 0; i < levels.cols(); ++i) {
            const double e = std::min(levels(j, i) - th.waste[static_cast<std::size_t>(i)], 0.0);
            s += e * e;
        }
    return s;
}

inline double combined_loss(double l1, double l2, const LossWeights& w) { return w.flood * l1 + w.waste * l2; }

inline double combined_loss(const Mat& levels, const Thresholds& th, const LossWeights& w) {
    return combined_loss(flood_loss(levels, th), wastage_loss(levels, th), w);
}

// Differentiable forms over [..., N] tensors in ft. Each returns the sum over all elements.

inline ad::Tensor flood_loss(const ad::Tensor& levels, const Thresholds& th) {
    const std::vector<double> one(th.size(), 1.0);
    std::vector<double> shift(th.size());
    for (std::size_t i = 0; i < th.size(); ++i) shift[i] = -th.flood[i];
    return ad::reduce_sum(ad::square(ad::max_with_scalar(ad::affine_last(levels, one, shift), 0.0)));
}

inline ad::Tensor wastage_loss(const ad::Tensor& levels, const Thresholds& th) {
    const std::vector<double> one(th.size(), 1.0);
    std::vector<double> shift(th.size());
    for (std::size_t i = 0; i < th.size(); ++i) shift[i] = -th.waste[i];
    return ad::reduce_sum(ad::square(ad::min_with_scalar(ad::affine_last(levels, one, shift), 0.0)));
}

inline ad::Tensor combined_loss(const ad::Tensor& l1, const ad::Tensor& l2, const LossWeights& w) {
    return ad::scale(l1, w.flood) + ad::scale(l2, w.waste);
}

} // namespace fidlar::models
