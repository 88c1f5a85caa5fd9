#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dclsnet/tensor.hpp"

namespace dclsnet {

// Central finite differences against an analytic gradient, 64-bit.
// Relative error uses max(|a|,|b|,1e-8) as denominator. Per component the
// best of three step sizes is taken: small steps are round-off limited on
// near-zero gradients, large steps truncation limited on curved ones, and a
// wrong analytic gradient disagrees at every step.
inline double finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x,
                                const std::vector<double>& analytic_grad,
                                double step = 1e-5) {
    if (x.size() != analytic_grad.size())
        throw std::invalid_argument("finite_diff_check: grad size mismatch");
    const double steps[3] = {step, 10.0 * step, 30.0 * step};
    double max_rel = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        const double a = analytic_grad[i];
        double best = std::numeric_limits<double>::infinity();
        for (const double h : steps) {
            x[i] = orig + h;
            const double fp = f(x);
            x[i] = orig - h;
            const double fm = f(x);
            x[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("finite_diff_check: non-finite function value");
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            best = std::min(best, std::fabs(a - numeric) / denom);
        }
        max_rel = std::max(max_rel, best);
    }
    return max_rel;
}

}  // namespace dclsnet
