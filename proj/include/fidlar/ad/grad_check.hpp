#pragma once

#include "tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace fidlar::ad {

/**
 * Compares reverse-mode gradients of a scalar function against central
 * finite differences, perturbing every element of every leaf in `leaves`.
 *
 * Returns max |g_ad - g_fd| / max(1, |g_fd|) over all coordinates. The
 * leaves' values are restored before returning; their grads are cleared.
 */
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double eps = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    const Tensor out = f();
    out.backward();
    std::vector<Array> analytic;
    for (const auto& l : leaves) analytic.push_back(l.grad());
    for (auto& l : leaves) l.zero_grad();

    NoGradGuard guard;
    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li].mutable_value().data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double x0 = data[i];
            data[i] = x0 + eps;
            const double fp = f().item();
            data[i] = x0 - eps;
            const double fm = f().item();
            data[i] = x0;
            const double fd = (fp - fm) / (2.0 * eps);
            const double err = std::abs(analytic[li][i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

/// Single-input form: f is evaluated at a leaf holding `point`.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Array& point, double eps = 1e-5) {
    Tensor x = Tensor::leaf(point);
    return grad_check([&] { return f(x); }, {x}, eps);
}

} // namespace fidlar::ad
