#pragma once

#include <optional>

#include "urwkv/ops.hpp"

namespace urwkv {

enum class SaseMode { Shallow, Deep };

inline const char* to_string(SaseMode m) { return m == SaseMode::Shallow ? "shallow" : "deep"; }

// Deep once channels dominate resolution; C >= H*W, boundary inclusive.
inline SaseMode select_sase_mode(std::int64_t c, std::int64_t h, std::int64_t w) {
    check(c >= 1 && h >= 1 && w >= 1, "select_sase_mode: extents must be positive");
    return c >= h * w ? SaseMode::Deep : SaseMode::Shallow;
}

// Convolution + batch norm with the running buffers it owns.
template <class Real>
struct ConvBn {
    Tensor<Real> w, b;
    Tensor<Real> bn_gamma, bn_beta, bn_mean, bn_var;
    std::int64_t stride = 1, pad = 0, dil = 1, groups = 1;
    bool transposed = false;

    static ConvBn init(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t stride, std::int64_t pad,
                       std::int64_t dil, std::int64_t groups, bool transposed, Rng& rng) {
        ConvBn cb;
        const std::int64_t fan_in = (cin / groups) * k * k;
        const Real stddev = std::sqrt(Real(2) / static_cast<Real>(fan_in));
        // conv weights are [Cout,Cin/g,k,k]; transposed weights are [Cin,Cout,k,k]
        if (transposed) {
            cb.w = Tensor<Real>::randn({cin, cout, k, k}, rng, stddev, true);
        } else {
            cb.w = Tensor<Real>::randn({cout, cin / groups, k, k}, rng, stddev, true);
        }
        cb.b = Tensor<Real>::zeros({cout}, true);
        cb.bn_gamma = Tensor<Real>::ones({cout}, true);
        cb.bn_beta = Tensor<Real>::zeros({cout}, true);
        cb.bn_mean = Tensor<Real>::zeros({cout}, false);
        cb.bn_var = Tensor<Real>::ones({cout}, false);
        cb.stride = stride;
        cb.pad = pad;
        cb.dil = dil;
        cb.groups = groups;
        cb.transposed = transposed;
        return cb;
    }

    Tensor<Real> apply(const Tensor<Real>& x, bool training, bool relu_after) {
        auto h = transposed ? ops::conv_transpose2d(x, w, b, stride, pad)
                            : ops::conv2d(x, w, b, stride, pad, dil, groups);
        h = ops::batch_norm(h, bn_gamma, bn_beta, bn_mean, bn_var, training, Real(0.1), Real(1e-5));
        return relu_after ? ops::relu(h) : h;
    }
};

// Squeeze-and-excitation gate: g = sigmoid(W2 * relu(W1 * gap(x))).
template <class Real>
struct SeGateParams {
    Tensor<Real> w1;  // [C, C/r]
    Tensor<Real> w2;  // [C/r, C]

    static SeGateParams init(std::int64_t c, std::int64_t hidden, Rng& rng) {
        check(hidden >= 1, "se gate: hidden width must be positive");
        SeGateParams p;
        p.w1 = Tensor<Real>::randn({c, hidden}, rng, std::sqrt(Real(2) / static_cast<Real>(c)), true);
        p.w2 = Tensor<Real>::randn({hidden, c}, rng, Real(1) / std::sqrt(static_cast<Real>(hidden)), true);
        return p;
    }
};

namespace ops {

// Gate values per (sample, channel), each strictly inside (0,1).
template <class Real>
Tensor<Real> se_gate(const Tensor<Real>& x, const SeGateParams<Real>& p) {
    check(x.rank() == 4, "se_gate: input must be [N,C,H,W]");
    check(x.dim(1) == p.w1.dim(0), "se_gate: channel width mismatch");
    auto pooled = global_avg_pool(x);
    return sigmoid(matmul(relu(matmul(pooled, p.w1)), p.w2));
}

// Single-map convenience: [C,H,W] in, [C,1,1] gates out.
template <class Real>
Tensor<Real> se_gate(const Tensor<Real>& x, const SeGateParams<Real>& p, int) {
    check(x.rank() == 3, "se_gate: input must be [C,H,W]");
    auto g = se_gate(reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)}), p);
    return reshape(g, Shape{x.dim(0), std::int64_t(1), std::int64_t(1)});
}

}  // namespace ops

// Stage-adaptive squeeze-and-excitation block. Shallow stages use a dilated
// inverted bottleneck (1x1 expand x4, 3x3 depthwise dilation 2, SE, 1x1
// project); deep stages split channels into 8 groups, double them with a
// grouped pointwise conv, run a depthwise-separable 3x3, SE with hidden
// width C/4, and project back. Residual-compatible in both modes.
template <class Real>
struct SaseParams {
    SaseMode mode = SaseMode::Shallow;
    ConvBn<Real> expand;
    ConvBn<Real> dw;
    std::optional<ConvBn<Real>> pw;  // deep only
    SeGateParams<Real> se;
    ConvBn<Real> project;

    static SaseParams init(std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t se_ratio, Rng& rng) {
        SaseParams p;
        p.mode = select_sase_mode(c, h, w);
        if (p.mode == SaseMode::Shallow) {
            const std::int64_t mid = se_ratio * c;
            check(mid % se_ratio == 0, "sase: expanded width not divisible by SE ratio");
            p.expand = ConvBn<Real>::init(c, mid, 1, 1, 0, 1, 1, false, rng);
            p.dw = ConvBn<Real>::init(mid, mid, 3, 1, 2, 2, mid, false, rng);
            p.se = SeGateParams<Real>::init(mid, mid / se_ratio, rng);
            p.project = ConvBn<Real>::init(mid, c, 1, 1, 0, 1, 1, false, rng);
        } else {
            check(c % 8 == 0, "sase deep mode: channel count " + std::to_string(c) + " must be divisible by 8");
            const std::int64_t mid = 2 * c;
            p.expand = ConvBn<Real>::init(c, mid, 1, 1, 0, 1, 8, false, rng);
            p.dw = ConvBn<Real>::init(mid, mid, 3, 1, 1, 1, mid, false, rng);
            p.pw = ConvBn<Real>::init(mid, mid, 1, 1, 0, 1, 1, false, rng);
            p.se = SeGateParams<Real>::init(mid, c / 4, rng);
            p.project = ConvBn<Real>::init(mid, c, 1, 1, 0, 1, 1, false, rng);
        }
        return p;
    }
};

namespace ops {

template <class Real>
Tensor<Real> sase_forward(const Tensor<Real>& x, SaseParams<Real>& p, bool training, bool gate_forced_one = false) {
    check(x.rank() == 4, "sase_forward: input must be [N,C,H,W]");
    check(x.dim(1) == p.project.b.dim(0), "sase_forward: channel width mismatch");
    auto h = p.expand.apply(x, training, true);
    h = p.dw.apply(h, training, true);
    if (p.pw) h = p.pw->apply(h, training, true);
    if (!gate_forced_one) {
        h = scale_channels(h, se_gate(h, p.se));
    }
    h = p.project.apply(h, training, false);
    return add(x, h);
}

// Per-sample [C,H,W] form.
template <class Real>
Tensor<Real> sase_forward(const Tensor<Real>& x, SaseParams<Real>& p, bool training, bool gate_forced_one, int) {
    check(x.rank() == 3, "sase_forward: input must be [C,H,W]");
    auto y = sase_forward(reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)}), p, training, gate_forced_one);
    return reshape(y, Shape{x.dim(0), x.dim(1), x.dim(2)});
}

}  // namespace ops
}  // namespace urwkv
