#pragma once

#include <functional>

#include "urwkv/ops.hpp"
#include "urwkv/random.hpp"

namespace urwkv::testing {

// Inner-product adjoint test for a primitive: compares the implemented
// transpose (via backward) against a central-difference directional
// derivative of the forward map,
//   <J dx, dy>  ==  <dx, J^T dy>.
// rebuild() must re-run the op from the current values of `inputs`.
inline double adjoint_error(const std::function<Tensor<double>()>& rebuild, std::vector<Tensor<double>> inputs,
                            std::uint64_t seed, double h = 1e-6) {
    Rng rng(seed);
    std::vector<std::vector<double>> dx;
    for (auto& in : inputs) {
        std::vector<double> d(in.data().size());
        for (auto& v : d) v = rng.normal();
        dx.push_back(std::move(d));
        in.zero_grad();
    }
    auto y0 = rebuild();
    std::vector<double> dy(y0.data().size());
    for (auto& v : dy) v = rng.normal();
    auto dy_t = Tensor<double>::from_data(y0.shape(), dy);

    // <dx, J^T dy> through the implemented backward
    ops::sum(ops::mul(y0, dy_t)).backward();
    double vjp = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].has_grad()) continue;
        for (std::size_t j = 0; j < dx[i].size(); ++j) vjp += dx[i][j] * inputs[i].grad()[j];
    }

    // <J dx, dy> by central differences along dx
    auto nudge = [&](double s) {
        for (std::size_t i = 0; i < inputs.size(); ++i)
            for (std::size_t j = 0; j < dx[i].size(); ++j) inputs[i].data()[j] += s * dx[i][j];
    };
    nudge(h);
    auto yp = rebuild();
    double fp = 0.0;
    for (std::size_t j = 0; j < dy.size(); ++j) fp += yp.data()[j] * dy[j];
    nudge(-2 * h);
    auto ym = rebuild();
    double fm = 0.0;
    for (std::size_t j = 0; j < dy.size(); ++j) fm += ym.data()[j] * dy[j];
    nudge(h);
    const double jvp = (fp - fm) / (2 * h);

    return std::abs(jvp - vjp) / std::max(1.0, std::abs(vjp));
}

template <class Real>
std::vector<Real> rotate180(const std::vector<Real>& v, std::int64_t c_len, std::int64_t h, std::int64_t w) {
    std::vector<Real> out(v.size());
    const std::int64_t plane = h * w;
    for (std::int64_t c = 0; c < c_len; ++c)
        for (std::int64_t i = 0; i < plane; ++i) out[static_cast<std::size_t>(c * plane + i)] =
            v[static_cast<std::size_t>(c * plane + plane - 1 - i)];
    return out;
}

template <class Real>
double max_abs_diff(const std::vector<Real>& a, const std::vector<Real>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return worst;
}

}  // namespace urwkv::testing
