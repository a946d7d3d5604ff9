#pragma once

#include <cmath>

#include "urwkv/kernels.hpp"
#include "urwkv/tensor.hpp"

namespace urwkv::ops {

namespace detail {
using urwkv::detail::attach;

template <class Real>
Real stable_sigmoid(Real x) {
    if (x >= Real(0)) {
        return Real(1) / (Real(1) + std::exp(-x));
    }
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}
}  // namespace detail

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<Real> out(a.data());
    for (std::int64_t i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] += b.data()[static_cast<std::size_t>(i)];
    auto y = Tensor<Real>::from_data(a.shape(), std::move(out));
    auto an = a.node();
    auto bn = b.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a, &b}, [an, bn, yn]() {
        const auto n = yn->size();
        if (an->requires_grad) an->accumulate(yn->grad.data(), n);
        if (bn->requires_grad) bn->accumulate(yn->grad.data(), n);
    });
    return y;
}

// seq [T, C] + bias [C] broadcast over tokens.
template <class Real>
Tensor<Real> add_rowvec(const Tensor<Real>& seq, const Tensor<Real>& bias) {
    check(seq.rank() == 2, "add_rowvec: expected [T,C] input, got " + shape_str(seq.shape()));
    const std::int64_t t_len = seq.dim(0), c_len = seq.dim(1);
    check(bias.rank() == 1 && bias.dim(0) == c_len, "add_rowvec: bias length mismatch");
    std::vector<Real> out(seq.data());
    for (std::int64_t t = 0; t < t_len; ++t)
        for (std::int64_t c = 0; c < c_len; ++c) out[static_cast<std::size_t>(t * c_len + c)] += bias.data()[static_cast<std::size_t>(c)];
    auto y = Tensor<Real>::from_data(seq.shape(), std::move(out));
    auto sn = seq.node();
    auto bn = bias.node();
    auto* yn = y.node().get();
    detail::attach(y, {&seq, &bias}, [sn, bn, yn, t_len, c_len]() {
        if (sn->requires_grad) sn->accumulate(yn->grad.data(), yn->size());
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t t = 0; t < t_len; ++t)
                for (std::int64_t c = 0; c < c_len; ++c)
                    bn->grad[static_cast<std::size_t>(c)] += yn->grad[static_cast<std::size_t>(t * c_len + c)];
        }
    });
    return y;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    check(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<Real> out(static_cast<std::size_t>(a.size()));
    for (std::int64_t i = 0; i < a.size(); ++i)
        out[static_cast<std::size_t>(i)] = a.data()[static_cast<std::size_t>(i)] * b.data()[static_cast<std::size_t>(i)];
    auto y = Tensor<Real>::from_data(a.shape(), std::move(out));
    auto an = a.node();
    auto bn = b.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a, &b}, [an, bn, yn]() {
        const auto n = yn->size();
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                an->grad[static_cast<std::size_t>(i)] += bn->value[static_cast<std::size_t>(i)] * yn->grad[static_cast<std::size_t>(i)];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                bn->grad[static_cast<std::size_t>(i)] += an->value[static_cast<std::size_t>(i)] * yn->grad[static_cast<std::size_t>(i)];
        }
    });
    return y;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
    std::vector<Real> out(a.data());
    for (auto& v : out) v *= s;
    auto y = Tensor<Real>::from_data(a.shape(), std::move(out));
    auto an = a.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a}, [an, yn, s]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += s * yn->grad[i];
    });
    return y;
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    std::vector<Real> out(a.data());
    for (auto& v : out) v = v > Real(0) ? v : Real(0);
    auto y = Tensor<Real>::from_data(a.shape(), std::move(out));
    auto an = a.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a}, [an, yn]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i)
            if (an->value[i] > Real(0)) an->grad[i] += yn->grad[i];
    });
    return y;
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
    std::vector<Real> out(a.data());
    for (auto& v : out) v = detail::stable_sigmoid(v);
    auto y = Tensor<Real>::from_data(a.shape(), std::move(out));
    auto an = a.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a}, [an, yn]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) {
            const Real s = yn->value[i];
            an->grad[i] += s * (Real(1) - s) * yn->grad[i];
        }
    });
    return y;
}

template <class Real>
Tensor<Real> square(const Tensor<Real>& a) {
    std::vector<Real> out(a.data());
    for (auto& v : out) v = v * v;
    auto y = Tensor<Real>::from_data(a.shape(), std::move(out));
    auto an = a.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a}, [an, yn]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += Real(2) * an->value[i] * yn->grad[i];
    });
    return y;
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Real acc = Real(0);
    for (const auto& v : a.data()) acc += v;
    auto y = Tensor<Real>::from_data(Shape{}, std::vector<Real>{acc});
    auto an = a.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a}, [an, yn]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const Real g = yn->grad[0];
        for (auto& v : an->grad) v += g;
    });
    return y;
}

// a [M,K] * b [K,N] -> [M,N]
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: expected 2-d operands");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    check(b.dim(0) == k, "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<Real> out(static_cast<std::size_t>(m * n));
    kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto y = Tensor<Real>::from_data(Shape{m, n}, std::move(out));
    auto an = a.node();
    auto bn = b.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a, &b}, [an, bn, yn, m, k, n]() {
        const Real* gy = yn->grad.data();
        if (an->requires_grad) {
            // ga = gy * b^T
            std::vector<Real> bt(static_cast<std::size_t>(k * n));
            for (std::int64_t p = 0; p < k; ++p)
                for (std::int64_t j = 0; j < n; ++j)
                    bt[static_cast<std::size_t>(j * k + p)] = bn->value[static_cast<std::size_t>(p * n + j)];
            std::vector<Real> ga(static_cast<std::size_t>(m * k));
            kernels::matmul(gy, bt.data(), ga.data(), m, n, k);
            an->accumulate(ga.data(), m * k);
        }
        if (bn->requires_grad) {
            // gb = a^T * gy
            std::vector<Real> at(static_cast<std::size_t>(m * k));
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p)
                    at[static_cast<std::size_t>(p * m + i)] = an->value[static_cast<std::size_t>(i * k + p)];
            std::vector<Real> gb(static_cast<std::size_t>(k * n));
            kernels::matmul(at.data(), gy, gb.data(), k, m, n);
            bn->accumulate(gb.data(), k * n);
        }
    });
    return y;
}

// x [N,Cin,H,W], w [Cout,Cin/groups,kh,kw], optional bias [Cout].
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias, std::int64_t stride,
                    std::int64_t padding, std::int64_t dilation = 1, std::int64_t groups = 1) {
    check(x.rank() == 4, "conv2d: input must be [N,Cin,H,W], got " + shape_str(x.shape()));
    check(w.rank() == 4, "conv2d: weight must be [Cout,Cin/groups,kh,kw], got " + shape_str(w.shape()));
    check(stride >= 1 && padding >= 0 && dilation >= 1 && groups >= 1, "conv2d: bad stride/padding/dilation/groups");
    kernels::Conv2dDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = padding;
    d.dil = dilation;
    d.groups = groups;
    check(d.cin % groups == 0 && d.cout % groups == 0,
          "conv2d: channels (" + std::to_string(d.cin) + "," + std::to_string(d.cout) + ") not divisible by groups " +
              std::to_string(groups));
    check(w.dim(1) == d.cin / groups, "conv2d: weight input-channel extent " + std::to_string(w.dim(1)) +
                                          " != Cin/groups = " + std::to_string(d.cin / groups));
    if (bias.defined())
        check(bias.rank() == 1 && bias.dim(0) == d.cout, "conv2d: bias must be [Cout]");
    d.hout = kernels::conv_out_extent(d.h, d.kh, stride, padding, dilation);
    d.wout = kernels::conv_out_extent(d.w, d.kw, stride, padding, dilation);
    check(d.hout >= 1 && d.wout >= 1, "conv2d: zero-size spatial output for input " + shape_str(x.shape()) +
                                          " with kernel " + shape_str(w.shape()));

    std::vector<Real> out(static_cast<std::size_t>(d.n * d.cout * d.hout * d.wout));
    kernels::conv2d_forward(x.data().data(), w.data().data(), bias.defined() ? bias.data().data() : nullptr,
                            out.data(), d);
    auto y = Tensor<Real>::from_data(Shape{d.n, d.cout, d.hout, d.wout}, std::move(out));
    auto xn = x.node();
    auto wn = w.node();
    auto biasn = bias.defined() ? bias.node() : nullptr;
    auto* yn = y.node().get();
    detail::attach(y, {&x, &w, &bias}, [xn, wn, biasn, yn, d]() {
        const Real* gy = yn->grad.data();
        if (xn->requires_grad) {
            xn->ensure_grad();
            kernels::conv2d_backward_data(gy, wn->value.data(), xn->grad.data(), d);
        }
        if (wn->requires_grad || (biasn && biasn->requires_grad)) {
            Real* gb = nullptr;
            if (biasn && biasn->requires_grad) {
                biasn->ensure_grad();
                gb = biasn->grad.data();
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                kernels::conv2d_backward_weights(xn->value.data(), gy, wn->grad.data(), gb, d);
            } else if (gb) {
                std::vector<Real> scratch(wn->value.size(), Real(0));
                kernels::conv2d_backward_weights(xn->value.data(), gy, scratch.data(), gb, d);
            }
        }
    });
    return y;
}

// x [N,Cin,H,W], w [Cin,Cout,kh,kw]; output extent (H-1)*stride - 2*pad + kh.
// Realized as the exact adjoint of conv2d, so <conv(a),b> == <a, convT(b)>.
template <class Real>
Tensor<Real> conv_transpose2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                              std::int64_t stride, std::int64_t padding) {
    check(x.rank() == 4, "conv_transpose2d: input must be [N,Cin,H,W], got " + shape_str(x.shape()));
    check(w.rank() == 4 && w.dim(0) == x.dim(1),
          "conv_transpose2d: weight must be [Cin,Cout,kh,kw] with Cin=" + std::to_string(x.dim(1)));
    const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const std::int64_t hout = (h - 1) * stride - 2 * padding + kh;
    const std::int64_t wout = (wd - 1) * stride - 2 * padding + kw;
    check(hout >= 1 && wout >= 1, "conv_transpose2d: zero-size spatial output");
    if (bias.defined())
        check(bias.rank() == 1 && bias.dim(0) == cout, "conv_transpose2d: bias must be [Cout]");

    // Dims of the conv whose backward-data pass computes this forward.
    kernels::Conv2dDims d;
    d.n = n;
    d.cin = cout;
    d.h = hout;
    d.w = wout;
    d.cout = cin;
    d.kh = kh;
    d.kw = kw;
    d.stride = stride;
    d.pad = padding;
    d.dil = 1;
    d.groups = 1;
    d.hout = h;
    d.wout = wd;

    std::vector<Real> out(static_cast<std::size_t>(n * cout * hout * wout), Real(0));
    kernels::conv2d_backward_data(x.data().data(), w.data().data(), out.data(), d);
    if (bias.defined()) {
        for (std::int64_t nn = 0; nn < n; ++nn)
            for (std::int64_t c = 0; c < cout; ++c) {
                const Real b = bias.data()[static_cast<std::size_t>(c)];
                Real* p = out.data() + ((nn * cout + c) * hout) * wout;
                for (std::int64_t i = 0; i < hout * wout; ++i) p[i] += b;
            }
    }
    auto y = Tensor<Real>::from_data(Shape{n, cout, hout, wout}, std::move(out));
    auto xn = x.node();
    auto wn = w.node();
    auto biasn = bias.defined() ? bias.node() : nullptr;
    auto* yn = y.node().get();
    detail::attach(y, {&x, &w, &bias}, [xn, wn, biasn, yn, d, n, cout, hout, wout]() {
        const Real* gy = yn->grad.data();
        if (xn->requires_grad) {
            std::vector<Real> gx(xn->value.size());
            kernels::conv2d_forward(gy, wn->value.data(), static_cast<const Real*>(nullptr), gx.data(), d);
            xn->accumulate(gx.data(), xn->size());
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            kernels::conv2d_backward_weights(gy, xn->value.data(), wn->grad.data(), static_cast<Real*>(nullptr), d);
        }
        if (biasn && biasn->requires_grad) {
            biasn->ensure_grad();
            for (std::int64_t nn = 0; nn < n; ++nn)
                for (std::int64_t c = 0; c < cout; ++c) {
                    const Real* p = gy + ((nn * cout + c) * hout) * wout;
                    Real acc = Real(0);
                    for (std::int64_t i = 0; i < hout * wout; ++i) acc += p[i];
                    biasn->grad[static_cast<std::size_t>(c)] += acc;
                }
        }
    });
    return y;
}

// x [N,C,H,W]; gamma/beta [C]; running stats updated in place in training mode
// (they never join the graph). Normalization uses biased batch variance.
template <class Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Tensor<Real>& running_mean, Tensor<Real>& running_var, bool training, Real momentum,
                        Real eps) {
    check(x.rank() == 4, "batch_norm: input must be [N,C,H,W], got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c_len = x.dim(1), h = x.dim(2), w = x.dim(3);
    check(gamma.rank() == 1 && gamma.dim(0) == c_len && beta.rank() == 1 && beta.dim(0) == c_len,
          "batch_norm: gamma/beta must be [C] with C=" + std::to_string(c_len));
    const std::int64_t plane = h * w;
    const std::int64_t count = n * plane;
    if (training) check(count > 1, "batch_norm: variance degenerate, need N*H*W > 1 in training mode");

    std::vector<Real> mean(static_cast<std::size_t>(c_len)), invstd(static_cast<std::size_t>(c_len));
    if (training) {
        for (std::int64_t c = 0; c < c_len; ++c) {
            Real acc = Real(0);
            for (std::int64_t nn = 0; nn < n; ++nn) {
                const Real* p = x.data().data() + ((nn * c_len + c) * plane);
                for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
            }
            mean[static_cast<std::size_t>(c)] = acc / static_cast<Real>(count);
        }
        for (std::int64_t c = 0; c < c_len; ++c) {
            Real acc = Real(0);
            const Real mu = mean[static_cast<std::size_t>(c)];
            for (std::int64_t nn = 0; nn < n; ++nn) {
                const Real* p = x.data().data() + ((nn * c_len + c) * plane);
                for (std::int64_t i = 0; i < plane; ++i) {
                    const Real d = p[i] - mu;
                    acc += d * d;
                }
            }
            const Real var = acc / static_cast<Real>(count);
            invstd[static_cast<std::size_t>(c)] = Real(1) / std::sqrt(var + eps);
            running_mean.data()[static_cast<std::size_t>(c)] += momentum * (mu - running_mean.data()[static_cast<std::size_t>(c)]);
            running_var.data()[static_cast<std::size_t>(c)] += momentum * (var - running_var.data()[static_cast<std::size_t>(c)]);
        }
    } else {
        for (std::int64_t c = 0; c < c_len; ++c) {
            mean[static_cast<std::size_t>(c)] = running_mean.data()[static_cast<std::size_t>(c)];
            invstd[static_cast<std::size_t>(c)] =
                Real(1) / std::sqrt(running_var.data()[static_cast<std::size_t>(c)] + eps);
        }
    }

    std::vector<Real> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t nn = 0; nn < n; ++nn)
        for (std::int64_t c = 0; c < c_len; ++c) {
            const Real mu = mean[static_cast<std::size_t>(c)];
            const Real is = invstd[static_cast<std::size_t>(c)];
            const Real g = gamma.data()[static_cast<std::size_t>(c)];
            const Real b = beta.data()[static_cast<std::size_t>(c)];
            const Real* p = x.data().data() + ((nn * c_len + c) * plane);
            Real* q = out.data() + ((nn * c_len + c) * plane);
            for (std::int64_t i = 0; i < plane; ++i) q[i] = (p[i] - mu) * is * g + b;
        }

    auto y = Tensor<Real>::from_data(x.shape(), std::move(out));
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto* yn = y.node().get();
    detail::attach(y, {&x, &gamma, &beta},
                   [xn, gn, bn, yn, mean = std::move(mean), invstd = std::move(invstd), n, c_len, plane, count,
                    training]() {
                       const Real* gy = yn->grad.data();
                       std::vector<Real> sum_dy(static_cast<std::size_t>(c_len), Real(0));
                       std::vector<Real> sum_dy_xhat(static_cast<std::size_t>(c_len), Real(0));
                       for (std::int64_t nn = 0; nn < n; ++nn)
                           for (std::int64_t c = 0; c < c_len; ++c) {
                               const Real mu = mean[static_cast<std::size_t>(c)];
                               const Real is = invstd[static_cast<std::size_t>(c)];
                               const Real* px = xn->value.data() + ((nn * c_len + c) * plane);
                               const Real* pg = gy + ((nn * c_len + c) * plane);
                               Real s1 = Real(0), s2 = Real(0);
                               for (std::int64_t i = 0; i < plane; ++i) {
                                   s1 += pg[i];
                                   s2 += pg[i] * (px[i] - mu) * is;
                               }
                               sum_dy[static_cast<std::size_t>(c)] += s1;
                               sum_dy_xhat[static_cast<std::size_t>(c)] += s2;
                           }
                       if (bn->requires_grad) bn->accumulate(sum_dy.data(), c_len);
                       if (gn->requires_grad) gn->accumulate(sum_dy_xhat.data(), c_len);
                       if (xn->requires_grad) {
                           xn->ensure_grad();
                           const Real inv_count = Real(1) / static_cast<Real>(count);
                           for (std::int64_t nn = 0; nn < n; ++nn)
                               for (std::int64_t c = 0; c < c_len; ++c) {
                                   const Real mu = mean[static_cast<std::size_t>(c)];
                                   const Real is = invstd[static_cast<std::size_t>(c)];
                                   const Real g = gn->value[static_cast<std::size_t>(c)];
                                   const Real* px = xn->value.data() + ((nn * c_len + c) * plane);
                                   const Real* pg = gy + ((nn * c_len + c) * plane);
                                   Real* gx = xn->grad.data() + ((nn * c_len + c) * plane);
                                   if (training) {
                                       const Real sdy = sum_dy[static_cast<std::size_t>(c)];
                                       const Real sdx = sum_dy_xhat[static_cast<std::size_t>(c)];
                                       for (std::int64_t i = 0; i < plane; ++i) {
                                           const Real xhat = (px[i] - mu) * is;
                                           gx[i] += g * is * (pg[i] - inv_count * (sdy + xhat * sdx));
                                       }
                                   } else {
                                       for (std::int64_t i = 0; i < plane; ++i) gx[i] += g * is * pg[i];
                                   }
                               }
                       }
                   });
    return y;
}

// seq [T,C]; per-token standardization over the channel axis.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& seq, const Tensor<Real>& gamma, const Tensor<Real>& beta, Real eps) {
    check(seq.rank() == 2, "layer_norm: input must be [T,C], got " + shape_str(seq.shape()));
    const std::int64_t t_len = seq.dim(0), c_len = seq.dim(1);
    check(c_len >= 1, "layer_norm: channel extent must be positive");
    check(gamma.rank() == 1 && gamma.dim(0) == c_len && beta.rank() == 1 && beta.dim(0) == c_len,
          "layer_norm: gamma/beta must be [C]");

    std::vector<Real> mean(static_cast<std::size_t>(t_len)), invstd(static_cast<std::size_t>(t_len));
    std::vector<Real> out(static_cast<std::size_t>(seq.size()));
    for (std::int64_t t = 0; t < t_len; ++t) {
        const Real* p = seq.data().data() + t * c_len;
        Real mu = Real(0);
        for (std::int64_t c = 0; c < c_len; ++c) mu += p[c];
        mu /= static_cast<Real>(c_len);
        Real var = Real(0);
        for (std::int64_t c = 0; c < c_len; ++c) {
            const Real d = p[c] - mu;
            var += d * d;
        }
        var /= static_cast<Real>(c_len);
        const Real is = Real(1) / std::sqrt(var + eps);
        mean[static_cast<std::size_t>(t)] = mu;
        invstd[static_cast<std::size_t>(t)] = is;
        Real* q = out.data() + t * c_len;
        for (std::int64_t c = 0; c < c_len; ++c)
            q[c] = (p[c] - mu) * is * gamma.data()[static_cast<std::size_t>(c)] + beta.data()[static_cast<std::size_t>(c)];
    }
    auto y = Tensor<Real>::from_data(seq.shape(), std::move(out));
    auto xn = seq.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto* yn = y.node().get();
    detail::attach(y, {&seq, &gamma, &beta},
                   [xn, gn, bn, yn, mean = std::move(mean), invstd = std::move(invstd), t_len, c_len]() {
                       const Real* gy = yn->grad.data();
                       if (gn->requires_grad || bn->requires_grad) {
                           if (gn->requires_grad) gn->ensure_grad();
                           if (bn->requires_grad) bn->ensure_grad();
                           for (std::int64_t t = 0; t < t_len; ++t) {
                               const Real mu = mean[static_cast<std::size_t>(t)];
                               const Real is = invstd[static_cast<std::size_t>(t)];
                               const Real* px = xn->value.data() + t * c_len;
                               const Real* pg = gy + t * c_len;
                               for (std::int64_t c = 0; c < c_len; ++c) {
                                   if (gn->requires_grad)
                                       gn->grad[static_cast<std::size_t>(c)] += pg[c] * (px[c] - mu) * is;
                                   if (bn->requires_grad) bn->grad[static_cast<std::size_t>(c)] += pg[c];
                               }
                           }
                       }
                       if (xn->requires_grad) {
                           xn->ensure_grad();
                           const Real inv_c = Real(1) / static_cast<Real>(c_len);
                           for (std::int64_t t = 0; t < t_len; ++t) {
                               const Real mu = mean[static_cast<std::size_t>(t)];
                               const Real is = invstd[static_cast<std::size_t>(t)];
                               const Real* px = xn->value.data() + t * c_len;
                               const Real* pg = gy + t * c_len;
                               Real sdy = Real(0), sdx = Real(0);
                               for (std::int64_t c = 0; c < c_len; ++c) {
                                   const Real gi = pg[c] * gn->value[static_cast<std::size_t>(c)];
                                   sdy += gi;
                                   sdx += gi * (px[c] - mu) * is;
                               }
                               Real* gx = xn->grad.data() + t * c_len;
                               for (std::int64_t c = 0; c < c_len; ++c) {
                                   const Real gi = pg[c] * gn->value[static_cast<std::size_t>(c)];
                                   const Real xhat = (px[c] - mu) * is;
                                   gx[c] += is * (gi - inv_c * (sdy + xhat * sdx));
                               }
                           }
                       }
                   });
    return y;
}

// [N,C,H,W] -> [N,C]
template <class Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
    check(x.rank() == 4, "global_avg_pool: input must be [N,C,H,W]");
    const std::int64_t n = x.dim(0), c_len = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<Real> out(static_cast<std::size_t>(n * c_len));
    for (std::int64_t i = 0; i < n * c_len; ++i) {
        const Real* p = x.data().data() + i * plane;
        Real acc = Real(0);
        for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
        out[static_cast<std::size_t>(i)] = acc / static_cast<Real>(plane);
    }
    auto y = Tensor<Real>::from_data(Shape{n, c_len}, std::move(out));
    auto xn = x.node();
    auto* yn = y.node().get();
    detail::attach(y, {&x}, [xn, yn, n, c_len, plane]() {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const Real inv = Real(1) / static_cast<Real>(plane);
        for (std::int64_t i = 0; i < n * c_len; ++i) {
            const Real g = yn->grad[static_cast<std::size_t>(i)] * inv;
            Real* p = xn->grad.data() + i * plane;
            for (std::int64_t j = 0; j < plane; ++j) p[j] += g;
        }
    });
    return y;
}

// x [N,C,H,W] scaled per channel by g [N,C].
template <class Real>
Tensor<Real> scale_channels(const Tensor<Real>& x, const Tensor<Real>& g) {
    check(x.rank() == 4 && g.rank() == 2 && g.dim(0) == x.dim(0) && g.dim(1) == x.dim(1),
          "scale_channels: expected x [N,C,H,W] and gates [N,C]");
    const std::int64_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<Real> out(x.data());
    for (std::int64_t i = 0; i < nc; ++i) {
        const Real s = g.data()[static_cast<std::size_t>(i)];
        Real* p = out.data() + i * plane;
        for (std::int64_t j = 0; j < plane; ++j) p[j] *= s;
    }
    auto y = Tensor<Real>::from_data(x.shape(), std::move(out));
    auto xn = x.node();
    auto gn = g.node();
    auto* yn = y.node().get();
    detail::attach(y, {&x, &g}, [xn, gn, yn, nc, plane]() {
        const Real* gy = yn->grad.data();
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::int64_t i = 0; i < nc; ++i) {
                const Real s = gn->value[static_cast<std::size_t>(i)];
                const Real* pg = gy + i * plane;
                Real* px = xn->grad.data() + i * plane;
                for (std::int64_t j = 0; j < plane; ++j) px[j] += s * pg[j];
            }
        }
        if (gn->requires_grad) {
            gn->ensure_grad();
            for (std::int64_t i = 0; i < nc; ++i) {
                const Real* pg = gy + i * plane;
                const Real* px = xn->value.data() + i * plane;
                Real acc = Real(0);
                for (std::int64_t j = 0; j < plane; ++j) acc += pg[j] * px[j];
                gn->grad[static_cast<std::size_t>(i)] += acc;
            }
        }
    });
    return y;
}

template <class Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
    check(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: spatial/batch extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
    std::vector<Real> out(static_cast<std::size_t>(n * (ca + cb) * plane));
    for (std::int64_t nn = 0; nn < n; ++nn) {
        std::copy_n(a.data().data() + nn * ca * plane, ca * plane, out.data() + nn * (ca + cb) * plane);
        std::copy_n(b.data().data() + nn * cb * plane, cb * plane, out.data() + (nn * (ca + cb) + ca) * plane);
    }
    auto y = Tensor<Real>::from_data(Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out));
    auto an = a.node();
    auto bn = b.node();
    auto* yn = y.node().get();
    detail::attach(y, {&a, &b}, [an, bn, yn, n, ca, cb, plane]() {
        const Real* gy = yn->grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::int64_t nn = 0; nn < n; ++nn) {
                const Real* src = gy + nn * (ca + cb) * plane;
                Real* dst = an->grad.data() + nn * ca * plane;
                for (std::int64_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t nn = 0; nn < n; ++nn) {
                const Real* src = gy + (nn * (ca + cb) + ca) * plane;
                Real* dst = bn->grad.data() + nn * cb * plane;
                for (std::int64_t i = 0; i < cb * plane; ++i) dst[i] += src[i];
            }
        }
    });
    return y;
}

// [N,...] -> the n-th sample with the leading axis dropped.
template <class Real>
Tensor<Real> select_batch(const Tensor<Real>& x, std::int64_t n) {
    check(x.rank() >= 2, "select_batch: input must have a batch axis");
    check(n >= 0 && n < x.dim(0), "select_batch: index out of range");
    Shape sub(x.shape().begin() + 1, x.shape().end());
    const std::int64_t stride = numel(sub);
    std::vector<Real> out(x.data().begin() + n * stride, x.data().begin() + (n + 1) * stride);
    auto y = Tensor<Real>::from_data(std::move(sub), std::move(out));
    auto xn = x.node();
    auto* yn = y.node().get();
    detail::attach(y, {&x}, [xn, yn, n, stride]() {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t i = 0; i < stride; ++i)
            xn->grad[static_cast<std::size_t>(n * stride + i)] += yn->grad[static_cast<std::size_t>(i)];
    });
    return y;
}

template <class Real>
Tensor<Real> stack_batch(const std::vector<Tensor<Real>>& parts) {
    check(!parts.empty(), "stack_batch: empty input");
    const Shape& sub = parts[0].shape();
    for (const auto& p : parts) check(p.shape() == sub, "stack_batch: mismatched part shapes");
    const std::int64_t stride = numel(sub);
    const auto n = static_cast<std::int64_t>(parts.size());
    std::vector<Real> out(static_cast<std::size_t>(n * stride));
    for (std::int64_t i = 0; i < n; ++i)
        std::copy_n(parts[static_cast<std::size_t>(i)].data().data(), stride, out.data() + i * stride);
    Shape shape{n};
    shape.insert(shape.end(), sub.begin(), sub.end());
    auto y = Tensor<Real>::from_data(std::move(shape), std::move(out));

    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (any) {
        auto node = y.node();
        node->requires_grad = true;
        std::vector<typename Tensor<Real>::NodePtr> pn;
        for (const auto& p : parts) {
            node->parents.push_back(p.node());
            pn.push_back(p.node());
        }
        auto* yn = y.node().get();
        node->backward_fn = [pn = std::move(pn), yn, stride]() {
            for (std::size_t i = 0; i < pn.size(); ++i) {
                if (!pn[i]->requires_grad) continue;
                pn[i]->accumulate(yn->grad.data() + static_cast<std::int64_t>(i) * stride, stride);
            }
        };
    }
    return y;
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape new_shape) {
    check(numel(new_shape) == x.size(), "reshape: element count mismatch for " + shape_str(new_shape));
    auto y = Tensor<Real>::from_data(std::move(new_shape), std::vector<Real>(x.data()));
    auto xn = x.node();
    auto* yn = y.node().get();
    detail::attach(y, {&x}, [xn, yn]() {
        if (xn->requires_grad) xn->accumulate(yn->grad.data(), yn->size());
    });
    return y;
}

template <class Real>
Tensor<Real> reverse_tokens(const Tensor<Real>& seq) {
    check(seq.rank() == 2, "reverse_tokens: input must be [T,C]");
    const std::int64_t t_len = seq.dim(0), c_len = seq.dim(1);
    std::vector<Real> out(static_cast<std::size_t>(seq.size()));
    for (std::int64_t t = 0; t < t_len; ++t)
        std::copy_n(seq.data().data() + t * c_len, c_len, out.data() + (t_len - 1 - t) * c_len);
    auto y = Tensor<Real>::from_data(seq.shape(), std::move(out));
    auto xn = seq.node();
    auto* yn = y.node().get();
    detail::attach(y, {&seq}, [xn, yn, t_len, c_len]() {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t t = 0; t < t_len; ++t)
            for (std::int64_t c = 0; c < c_len; ++c)
                xn->grad[static_cast<std::size_t>(t * c_len + c)] +=
                    yn->grad[static_cast<std::size_t>((t_len - 1 - t) * c_len + c)];
    });
    return y;
}

// Sum over batch and channels of the logit at one spatial site.
template <class Real>
Tensor<Real> pick_pixel_sum(const Tensor<Real>& x, std::int64_t h, std::int64_t w) {
    check(x.rank() == 4, "pick_pixel_sum: input must be [N,C,H,W]");
    check(h >= 0 && h < x.dim(2) && w >= 0 && w < x.dim(3), "pick_pixel_sum: pixel out of range");
    const std::int64_t nc = x.dim(0) * x.dim(1), hh = x.dim(2), ww = x.dim(3);
    Real acc = Real(0);
    for (std::int64_t i = 0; i < nc; ++i) acc += x.data()[static_cast<std::size_t>((i * hh + h) * ww + w)];
    auto y = Tensor<Real>::from_data(Shape{}, std::vector<Real>{acc});
    auto xn = x.node();
    auto* yn = y.node().get();
    detail::attach(y, {&x}, [xn, yn, nc, hh, ww, h, w]() {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const Real g = yn->grad[0];
        for (std::int64_t i = 0; i < nc; ++i) xn->grad[static_cast<std::size_t>((i * hh + h) * ww + w)] += g;
    });
    return y;
}

// Mean binary cross-entropy from logits; targets take no gradient.
template <class Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& logits, const Tensor<Real>& targets) {
    check(logits.shape() == targets.shape(), "bce_with_logits: shape mismatch");
    const std::int64_t m = logits.size();
    Real acc = Real(0);
    for (std::int64_t i = 0; i < m; ++i) {
        const Real x = logits.data()[static_cast<std::size_t>(i)];
        const Real z = targets.data()[static_cast<std::size_t>(i)];
        const Real pos = x > Real(0) ? x : Real(0);
        acc += pos - x * z + std::log1p(std::exp(-std::abs(x)));
    }
    acc /= static_cast<Real>(m);
    auto y = Tensor<Real>::from_data(Shape{}, std::vector<Real>{acc});
    auto xn = logits.node();
    auto tn = targets.node();
    auto* yn = y.node().get();
    detail::attach(y, {&logits}, [xn, tn, yn, m]() {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const Real g = yn->grad[0] / static_cast<Real>(m);
        for (std::int64_t i = 0; i < m; ++i) {
            const Real s = detail::stable_sigmoid(xn->value[static_cast<std::size_t>(i)]);
            xn->grad[static_cast<std::size_t>(i)] += g * (s - tn->value[static_cast<std::size_t>(i)]);
        }
    });
    return y;
}

// 1 - mean over samples of (2*sum(p*z)+s)/(sum(p)+sum(z)+s), p = sigmoid(x).
template <class Real>
Tensor<Real> soft_dice_loss(const Tensor<Real>& logits, const Tensor<Real>& targets, Real smooth) {
    check(logits.shape() == targets.shape(), "soft_dice_loss: shape mismatch");
    check(logits.rank() >= 1, "soft_dice_loss: input must have a batch axis");
    const std::int64_t n = logits.dim(0);
    const std::int64_t stride = logits.size() / n;
    std::vector<Real> inter(static_cast<std::size_t>(n)), psum(static_cast<std::size_t>(n)),
        zsum(static_cast<std::size_t>(n));
    Real mean_dice = Real(0);
    for (std::int64_t s = 0; s < n; ++s) {
        Real i_acc = Real(0), p_acc = Real(0), z_acc = Real(0);
        for (std::int64_t j = 0; j < stride; ++j) {
            const Real p = detail::stable_sigmoid(logits.data()[static_cast<std::size_t>(s * stride + j)]);
            const Real z = targets.data()[static_cast<std::size_t>(s * stride + j)];
            i_acc += p * z;
            p_acc += p;
            z_acc += z;
        }
        inter[static_cast<std::size_t>(s)] = i_acc;
        psum[static_cast<std::size_t>(s)] = p_acc;
        zsum[static_cast<std::size_t>(s)] = z_acc;
        mean_dice += (Real(2) * i_acc + smooth) / (p_acc + z_acc + smooth);
    }
    mean_dice /= static_cast<Real>(n);
    auto y = Tensor<Real>::from_data(Shape{}, std::vector<Real>{Real(1) - mean_dice});
    auto xn = logits.node();
    auto tn = targets.node();
    auto* yn = y.node().get();
    detail::attach(y, {&logits},
                   [xn, tn, yn, n, stride, smooth, inter = std::move(inter), psum = std::move(psum),
                    zsum = std::move(zsum)]() {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       const Real g = yn->grad[0] / static_cast<Real>(n);
                       for (std::int64_t s = 0; s < n; ++s) {
                           const Real denom = psum[static_cast<std::size_t>(s)] + zsum[static_cast<std::size_t>(s)] + smooth;
                           const Real numer = Real(2) * inter[static_cast<std::size_t>(s)] + smooth;
                           for (std::int64_t j = 0; j < stride; ++j) {
                               const Real x = xn->value[static_cast<std::size_t>(s * stride + j)];
                               const Real z = tn->value[static_cast<std::size_t>(s * stride + j)];
                               const Real p = detail::stable_sigmoid(x);
                               const Real ddice_dp = (Real(2) * z * denom - numer) / (denom * denom);
                               xn->grad[static_cast<std::size_t>(s * stride + j)] += -g * ddice_dp * p * (Real(1) - p);
                           }
                       }
                   });
    return y;
}

}  // namespace urwkv::ops
