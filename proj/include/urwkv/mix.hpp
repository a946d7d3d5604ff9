#pragma once

#include "urwkv/ops.hpp"

namespace urwkv {

// Parameters of one WKV spatial-mixing unit: layer-norm affine, the R/K/V
// projections, per-channel decay and bonus, and the output projection.
template <class Real>
struct SpatialMixParams {
    Tensor<Real> ln_gamma, ln_beta;      // [C]
    Tensor<Real> w_r, w_k, w_v, w_o;     // [C,C]
    Tensor<Real> decay, bonus;           // [C]

    static SpatialMixParams init(std::int64_t c, Rng& rng) {
        SpatialMixParams p;
        const Real s = Real(1) / std::sqrt(static_cast<Real>(c));
        p.ln_gamma = Tensor<Real>::ones({c}, true);
        p.ln_beta = Tensor<Real>::zeros({c}, true);
        p.w_r = Tensor<Real>::randn({c, c}, rng, s, true);
        p.w_k = Tensor<Real>::randn({c, c}, rng, s, true);
        p.w_v = Tensor<Real>::randn({c, c}, rng, s, true);
        p.w_o = Tensor<Real>::randn({c, c}, rng, s, true);
        p.decay = Tensor<Real>::uniform({c}, rng, Real(-0.5), Real(0.5), true);
        p.bonus = Tensor<Real>::uniform({c}, rng, Real(-0.5), Real(0.5), true);
        return p;
    }

    std::int64_t channels() const { return ln_gamma.dim(0); }
};

// Token-local feed-forward unit with squared-ReLU expansion.
template <class Real>
struct ChannelMixParams {
    Tensor<Real> ln_gamma, ln_beta;  // [C]
    Tensor<Real> w_k;                // [C, r*C]
    Tensor<Real> w_v;                // [r*C, C]
    Tensor<Real> w_r;                // [C, C]
    std::int64_t expansion = 4;

    static ChannelMixParams init(std::int64_t c, std::int64_t r, Rng& rng) {
        check(r >= 1, "channel mix expansion ratio must be >= 1");
        ChannelMixParams p;
        p.expansion = r;
        p.ln_gamma = Tensor<Real>::ones({c}, true);
        p.ln_beta = Tensor<Real>::zeros({c}, true);
        p.w_k = Tensor<Real>::randn({c, r * c}, rng, Real(1) / std::sqrt(static_cast<Real>(c)), true);
        p.w_v = Tensor<Real>::randn({r * c, c}, rng, Real(1) / std::sqrt(static_cast<Real>(r * c)), true);
        p.w_r = Tensor<Real>::randn({c, c}, rng, Real(1) / std::sqrt(static_cast<Real>(c)), true);
        return p;
    }

    std::int64_t channels() const { return ln_gamma.dim(0); }
};

namespace ops {

namespace detail {
template <class Real>
void wkv_shape_check(const Tensor<Real>& k, const Tensor<Real>& v, const Tensor<Real>& w, const Tensor<Real>& u) {
    check(k.rank() == 2 && v.rank() == 2 && k.shape() == v.shape(),
          "bi_wkv: K and V must be [T,C] with equal shapes, got " + shape_str(k.shape()) + " and " +
              shape_str(v.shape()));
    check(k.dim(0) >= 1, "bi_wkv: sequence must have at least one token");
    check(w.rank() == 1 && w.dim(0) == k.dim(1) && u.rank() == 1 && u.dim(0) == k.dim(1),
          "bi_wkv: decay and bonus must be [C]");
}
}  // namespace detail

// Direct O(T^2) evaluation of the bidirectional aggregation
//   y[t,c] = (sum_{i!=t} e^{-(|t-i|-1)/T*w_c + k_i} v_i + e^{u_c+k_t} v_t)
//          / (same sums without the v factors).
// No rescaling: any non-finite intermediate raises. Oracle and tiny-T use only.
template <class Real>
Tensor<Real> bi_wkv_naive(const Tensor<Real>& k, const Tensor<Real>& v, const Tensor<Real>& w, const Tensor<Real>& u) {
    detail::wkv_shape_check(k, v, w, u);
    const std::int64_t t_len = k.dim(0), c_len = k.dim(1);
    const Real inv_t = Real(1) / static_cast<Real>(t_len);
    std::vector<Real> out(static_cast<std::size_t>(k.size()));
    for (std::int64_t c = 0; c < c_len; ++c) {
        const Real wc = w.data()[static_cast<std::size_t>(c)];
        const Real uc = u.data()[static_cast<std::size_t>(c)];
        for (std::int64_t t = 0; t < t_len; ++t) {
            Real num = Real(0), den = Real(0);
            for (std::int64_t i = 0; i < t_len; ++i) {
                const Real ki = k.data()[static_cast<std::size_t>(i * c_len + c)];
                const Real vi = v.data()[static_cast<std::size_t>(i * c_len + c)];
                Real weight;
                if (i == t) {
                    weight = std::exp(uc + ki);
                } else {
                    const Real dist = static_cast<Real>(std::llabs(t - i) - 1);
                    weight = std::exp(-dist * inv_t * wc + ki);
                }
                num += weight * vi;
                den += weight;
                if (!std::isfinite(weight) || !std::isfinite(num) || !std::isfinite(den))
                    fail("bi_wkv_naive: non-finite intermediate (exponent overflow, the oracle does not rescale)");
            }
            out[static_cast<std::size_t>(t * c_len + c)] = num / den;
        }
    }
    auto y = Tensor<Real>::from_data(k.shape(), std::move(out));
    auto kn = k.node();
    auto vn = v.node();
    auto wn = w.node();
    auto un = u.node();
    auto* yn = y.node().get();
    urwkv::detail::attach(y, {&k, &v, &w, &u}, [kn, vn, wn, un, yn, t_len, c_len, inv_t]() {
        if (kn->requires_grad) kn->ensure_grad();
        if (vn->requires_grad) vn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (un->requires_grad) un->ensure_grad();
        for (std::int64_t c = 0; c < c_len; ++c) {
            const Real wc = wn->value[static_cast<std::size_t>(c)];
            const Real uc = un->value[static_cast<std::size_t>(c)];
            for (std::int64_t t = 0; t < t_len; ++t) {
                Real num = Real(0), den = Real(0);
                for (std::int64_t i = 0; i < t_len; ++i) {
                    const Real ki = kn->value[static_cast<std::size_t>(i * c_len + c)];
                    const Real vi = vn->value[static_cast<std::size_t>(i * c_len + c)];
                    const Real dist = static_cast<Real>(std::llabs(t - i) - 1);
                    const Real weight = i == t ? std::exp(uc + ki) : std::exp(-dist * inv_t * wc + ki);
                    num += weight * vi;
                    den += weight;
                }
                const Real g = yn->grad[static_cast<std::size_t>(t * c_len + c)];
                const Real dnum = g / den;
                const Real dden = -g * num / (den * den);
                for (std::int64_t i = 0; i < t_len; ++i) {
                    const Real ki = kn->value[static_cast<std::size_t>(i * c_len + c)];
                    const Real vi = vn->value[static_cast<std::size_t>(i * c_len + c)];
                    const Real dist = static_cast<Real>(std::llabs(t - i) - 1);
                    const Real weight = i == t ? std::exp(uc + ki) : std::exp(-dist * inv_t * wc + ki);
                    const Real common = dnum * vi + dden;
                    if (vn->requires_grad) vn->grad[static_cast<std::size_t>(i * c_len + c)] += dnum * weight;
                    if (kn->requires_grad) kn->grad[static_cast<std::size_t>(i * c_len + c)] += common * weight;
                    if (i == t) {
                        if (un->requires_grad) un->grad[static_cast<std::size_t>(c)] += common * weight;
                    } else {
                        if (wn->requires_grad)
                            wn->grad[static_cast<std::size_t>(c)] += common * weight * (-dist * inv_t);
                    }
                }
            }
        }
    });
    return y;
}

// Linear-time realization; numerically equal to the oracle wherever the
// oracle stays finite, and overflow-safe for arbitrary K via max-rescaled
// prefix accumulators (see kernels.hpp).
template <class Real>
Tensor<Real> bi_wkv_scan(const Tensor<Real>& k, const Tensor<Real>& v, const Tensor<Real>& w, const Tensor<Real>& u) {
    detail::wkv_shape_check(k, v, w, u);
    const std::int64_t t_len = k.dim(0), c_len = k.dim(1);
    std::vector<Real> out(static_cast<std::size_t>(k.size()));
    kernels::bi_wkv_forward(k.data().data(), v.data().data(), w.data().data(), u.data().data(), out.data(), t_len,
                            c_len);
    auto y = Tensor<Real>::from_data(k.shape(), std::move(out));
    auto kn = k.node();
    auto vn = v.node();
    auto wn = w.node();
    auto un = u.node();
    auto* yn = y.node().get();
    urwkv::detail::attach(y, {&k, &v, &w, &u}, [kn, vn, wn, un, yn, t_len, c_len]() {
        // The kernel produces all four gradients in one pass; route the ones
        // that participate in the graph and drop the rest.
        std::vector<Real> gk(kn->value.size(), Real(0)), gv(vn->value.size(), Real(0));
        std::vector<Real> gw(static_cast<std::size_t>(c_len), Real(0)), gu(static_cast<std::size_t>(c_len), Real(0));
        kernels::bi_wkv_backward(kn->value.data(), vn->value.data(), wn->value.data(), un->value.data(),
                                 yn->grad.data(), gk.data(), gv.data(), gw.data(), gu.data(), t_len, c_len);
        if (kn->requires_grad) kn->accumulate(gk.data(), t_len * c_len);
        if (vn->requires_grad) vn->accumulate(gv.data(), t_len * c_len);
        if (wn->requires_grad) wn->accumulate(gw.data(), c_len);
        if (un->requires_grad) un->accumulate(gu.data(), c_len);
    });
    return y;
}

// Full spatial-mixing unit: LN, R/K/V projections, WKV aggregation, sigmoid
// receptance gate, output projection. The residual is the caller's job.
template <class Real>
Tensor<Real> spatial_mix(const Tensor<Real>& seq, const SpatialMixParams<Real>& p) {
    check(seq.rank() == 2 && seq.dim(1) == p.channels(),
          "spatial_mix: input " + shape_str(seq.shape()) + " does not match parameter width " +
              std::to_string(p.channels()));
    auto x = layer_norm(seq, p.ln_gamma, p.ln_beta, Real(1e-5));
    auto r = matmul(x, p.w_r);
    auto k = matmul(x, p.w_k);
    auto v = matmul(x, p.w_v);
    auto wkv = bi_wkv_scan(k, v, p.decay, p.bonus);
    return matmul(mul(sigmoid(r), wkv), p.w_o);
}

// Token-local feed-forward: squared-ReLU expansion gated by sigmoid
// receptance. Output token t depends only on input token t.
template <class Real>
Tensor<Real> channel_mix(const Tensor<Real>& seq, const ChannelMixParams<Real>& p) {
    check(seq.rank() == 2 && seq.dim(1) == p.channels(),
          "channel_mix: input " + shape_str(seq.shape()) + " does not match parameter width " +
              std::to_string(p.channels()));
    auto x = layer_norm(seq, p.ln_gamma, p.ln_beta, Real(1e-5));
    auto k = square(relu(matmul(x, p.w_k)));
    return mul(sigmoid(matmul(x, p.w_r)), matmul(k, p.w_v));
}

// Forward and reversed sequence processing with independent parameters.
template <class Real>
Tensor<Real> dual_rwkv(const Tensor<Real>& seq, const SpatialMixParams<Real>& fwd, const SpatialMixParams<Real>& rev) {
    auto a = spatial_mix(seq, fwd);
    auto b = reverse_tokens(spatial_mix(reverse_tokens(seq), rev));
    return add(a, b);
}

}  // namespace ops
}  // namespace urwkv
