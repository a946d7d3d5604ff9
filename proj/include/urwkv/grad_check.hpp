#pragma once

#include <cmath>

#include "urwkv/tensor.hpp"

namespace urwkv {

// Central-difference gradient verification. f() must rebuild the graph from
// the current point values and return a scalar loss. Returns
//   max_i |analytic_i - fd_i| / max(1, |analytic_i|).
// 64-bit reals are a practical requirement; finite differences are too noisy
// in 32-bit.
template <class Real, class F>
Real grad_check(F&& f, Tensor<Real>& point, Real eps) {
    check(point.requires_grad(), "grad_check: point must require gradients");
    point.zero_grad();
    {
        auto loss = f();
        check(loss.size() == 1, "grad_check: function must be scalar-valued");
        loss.backward();
    }
    std::vector<Real> analytic = point.grad();
    point.zero_grad();

    Real worst = Real(0);
    auto& values = point.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const Real orig = values[i];
        values[i] = orig + eps;
        const Real fp = f().item();
        values[i] = orig - eps;
        const Real fm = f().item();
        values[i] = orig;
        const Real fd = (fp - fm) / (2 * eps);
        if (!std::isfinite(static_cast<double>(analytic[i])))
            fail("grad_check: analytic gradient is non-finite at coordinate " + std::to_string(i));
        if (!std::isfinite(static_cast<double>(fd)))
            fail("grad_check: finite-difference estimate is non-finite at coordinate " + std::to_string(i));
        const Real denom = std::max(Real(1), std::abs(analytic[i]));
        worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
    }
    return worst;
}

}  // namespace urwkv
