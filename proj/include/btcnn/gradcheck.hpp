#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "btcnn/tensor.hpp"

namespace btcnn {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
    bool passed = true;
};

/// Compares an analytic gradient against central differences
/// (f(t+h) - f(t-h)) / 2h, one coordinate at a time. The relative error per
/// coordinate is |a - n| / max(1e-8, |a| + |n|). theta is perturbed in
/// place and restored exactly before returning.
inline GradCheckResult finite_difference_check(const std::function<double(const Tensor&)>& f, Tensor& theta,
                                               const Tensor& analytic, double h = 1e-5,
                                               double tolerance = 1e-4) {
    require_shape(analytic, theta.shape(), "analytic gradient");
    GradCheckResult r;
    r.coordinates = theta.size();
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        const double up = f(theta);
        theta[i] = saved - h;
        const double down = f(theta);
        theta[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[i];
        const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        if (err > r.max_relative_error) {
            r.max_relative_error = err;
            r.worst_index = i;
        }
    }
    r.passed = r.max_relative_error < tolerance;
    return r;
}

} // namespace btcnn
