#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hyperx/tensor.hpp"

namespace hyperx::testutil {

/// Central finite differences of a scalar-valued function at the current
/// values of `param`, compared against the analytic gradient accumulated on
/// it. Returns the worst relative error over all elements.
inline double gradient_check(Tensor& param, const std::function<Tensor()>& loss_fn,
                             double step = 1e-5) {
    param.zero_grad();
    Tensor loss = loss_fn();
    backward(loss);
    std::vector<double> analytic(param.grad().begin(), param.grad().end());

    std::span<double> values = param.mutable_data();
    double worst = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        double saved = values[i];
        values[i] = saved + step;
        double up = loss_fn().item();
        values[i] = saved - step;
        double down = loss_fn().item();
        values[i] = saved;
        double numeric = (up - down) / (2.0 * step);
        double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-8});
        worst = std::max(worst, std::fabs(numeric - analytic[i]) / denom);
    }
    param.zero_grad();
    return worst;
}

inline bool approx(double a, double b, double eps = 1e-9) { return std::fabs(a - b) <= eps; }

}  // namespace hyperx::testutil
