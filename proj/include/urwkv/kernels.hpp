#pragma once

#include <cmath>
#include <limits>

#include "urwkv/common.hpp"
#include "urwkv/threading.hpp"

// Raw-array compute kernels. Each kernel has a plain serial version and an
// OpenMP version; the parallel loops split work so that every iteration owns
// its output slots and performs the same per-element summation order, so the
// two variants produce bitwise-identical results (asserted in tests, timed in
// the bench tool).
namespace urwkv::kernels {

struct Conv2dDims {
    std::int64_t n, cin, h, w;
    std::int64_t cout, kh, kw;
    std::int64_t stride, pad, dil, groups;
    std::int64_t hout, wout;
};

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad,
                                    std::int64_t dil) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

namespace detail {

template <class Real>
inline void conv2d_forward_one(const Real* x, const Real* w, const Real* bias, Real* y, const Conv2dDims& d,
                               std::int64_t n, std::int64_t co) {
    const std::int64_t cin_g = d.cin / d.groups;
    const std::int64_t cout_g = d.cout / d.groups;
    const std::int64_t g = co / cout_g;
    const std::int64_t ci0 = g * cin_g;
    const Real b = bias ? bias[co] : Real(0);
    Real* yrow = y + ((n * d.cout + co) * d.hout) * d.wout;
    for (std::int64_t ho = 0; ho < d.hout; ++ho) {
        for (std::int64_t wo = 0; wo < d.wout; ++wo) {
            Real acc = b;
            for (std::int64_t cig = 0; cig < cin_g; ++cig) {
                const Real* xc = x + ((n * d.cin + ci0 + cig) * d.h) * d.w;
                const Real* wc = w + ((co * cin_g + cig) * d.kh) * d.kw;
                for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                    const std::int64_t hi = ho * d.stride - d.pad + kh * d.dil;
                    if (hi < 0 || hi >= d.h) continue;
                    for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                        const std::int64_t wi = wo * d.stride - d.pad + kw * d.dil;
                        if (wi < 0 || wi >= d.w) continue;
                        acc += xc[hi * d.w + wi] * wc[kh * d.kw + kw];
                    }
                }
            }
            yrow[ho * d.wout + wo] = acc;
        }
    }
}

// Gather form: each input position collects the output positions it fed.
template <class Real>
inline void conv2d_backward_data_one(const Real* gy, const Real* w, Real* gx, const Conv2dDims& d, std::int64_t n,
                                     std::int64_t ci) {
    const std::int64_t cin_g = d.cin / d.groups;
    const std::int64_t cout_g = d.cout / d.groups;
    const std::int64_t g = ci / cin_g;
    const std::int64_t cig = ci - g * cin_g;
    Real* gxc = gx + ((n * d.cin + ci) * d.h) * d.w;
    for (std::int64_t hi = 0; hi < d.h; ++hi) {
        for (std::int64_t wi = 0; wi < d.w; ++wi) {
            Real acc = Real(0);
            for (std::int64_t co = g * cout_g; co < (g + 1) * cout_g; ++co) {
                const Real* gyc = gy + ((n * d.cout + co) * d.hout) * d.wout;
                const Real* wc = w + ((co * cin_g + cig) * d.kh) * d.kw;
                for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                    const std::int64_t num = hi + d.pad - kh * d.dil;
                    if (num < 0 || num % d.stride != 0) continue;
                    const std::int64_t ho = num / d.stride;
                    if (ho >= d.hout) continue;
                    for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                        const std::int64_t numw = wi + d.pad - kw * d.dil;
                        if (numw < 0 || numw % d.stride != 0) continue;
                        const std::int64_t wo = numw / d.stride;
                        if (wo >= d.wout) continue;
                        acc += gyc[ho * d.wout + wo] * wc[kh * d.kw + kw];
                    }
                }
            }
            gxc[hi * d.w + wi] += acc;
        }
    }
}

template <class Real>
inline void conv2d_backward_weights_one(const Real* x, const Real* gy, Real* gw, Real* gb, const Conv2dDims& d,
                                        std::int64_t co) {
    const std::int64_t cin_g = d.cin / d.groups;
    const std::int64_t cout_g = d.cout / d.groups;
    const std::int64_t g = co / cout_g;
    for (std::int64_t cig = 0; cig < cin_g; ++cig) {
        const std::int64_t ci = g * cin_g + cig;
        Real* gwc = gw + ((co * cin_g + cig) * d.kh) * d.kw;
        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                Real acc = Real(0);
                for (std::int64_t n = 0; n < d.n; ++n) {
                    const Real* xc = x + ((n * d.cin + ci) * d.h) * d.w;
                    const Real* gyc = gy + ((n * d.cout + co) * d.hout) * d.wout;
                    for (std::int64_t ho = 0; ho < d.hout; ++ho) {
                        const std::int64_t hi = ho * d.stride - d.pad + kh * d.dil;
                        if (hi < 0 || hi >= d.h) continue;
                        for (std::int64_t wo = 0; wo < d.wout; ++wo) {
                            const std::int64_t wi = wo * d.stride - d.pad + kw * d.dil;
                            if (wi < 0 || wi >= d.w) continue;
                            acc += xc[hi * d.w + wi] * gyc[ho * d.wout + wo];
                        }
                    }
                }
                gwc[kh * d.kw + kw] += acc;
            }
        }
    }
    if (gb) {
        Real acc = Real(0);
        for (std::int64_t n = 0; n < d.n; ++n) {
            const Real* gyc = gy + ((n * d.cout + co) * d.hout) * d.wout;
            for (std::int64_t i = 0; i < d.hout * d.wout; ++i) acc += gyc[i];
        }
        gb[co] += acc;
    }
}

}  // namespace detail

template <class Real>
void conv2d_forward_serial(const Real* x, const Real* w, const Real* bias, Real* y, const Conv2dDims& d) {
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t co = 0; co < d.cout; ++co) detail::conv2d_forward_one(x, w, bias, y, d, n, co);
}

template <class Real>
void conv2d_forward(const Real* x, const Real* w, const Real* bias, Real* y, const Conv2dDims& d) {
    const int threads = max_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(threads) if (threads > 1)
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t co = 0; co < d.cout; ++co) detail::conv2d_forward_one(x, w, bias, y, d, n, co);
}

// gx accumulated (+=), callers pass zero-filled or existing gradient buffers.
template <class Real>
void conv2d_backward_data_serial(const Real* gy, const Real* w, Real* gx, const Conv2dDims& d) {
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t ci = 0; ci < d.cin; ++ci) detail::conv2d_backward_data_one(gy, w, gx, d, n, ci);
}

template <class Real>
void conv2d_backward_data(const Real* gy, const Real* w, Real* gx, const Conv2dDims& d) {
    const int threads = max_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(threads) if (threads > 1)
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t ci = 0; ci < d.cin; ++ci) detail::conv2d_backward_data_one(gy, w, gx, d, n, ci);
}

template <class Real>
void conv2d_backward_weights_serial(const Real* x, const Real* gy, Real* gw, Real* gb, const Conv2dDims& d) {
    for (std::int64_t co = 0; co < d.cout; ++co) detail::conv2d_backward_weights_one(x, gy, gw, gb, d, co);
}

template <class Real>
void conv2d_backward_weights(const Real* x, const Real* gy, Real* gw, Real* gb, const Conv2dDims& d) {
    const int threads = max_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
    for (std::int64_t co = 0; co < d.cout; ++co) detail::conv2d_backward_weights_one(x, gy, gw, gb, d, co);
}

// c[m,n] = sum_k a[m,k] * b[k,n]; accumulation order over k is fixed.
template <class Real>
void matmul_serial(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = Real(0);
        const Real* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            const Real* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class Real>
void matmul(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    const int threads = max_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && m > 1)
    for (std::int64_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = Real(0);
        const Real* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            const Real* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Bidirectional WKV scan.
//
// For one channel with decay w, bonus u:
//   y_t = ( sum_{i<t} e^{-(t-1-i)/T*w + k_i} v_i
//         + sum_{i>t} e^{-(i-1-t)/T*w + k_i} v_i
//         + e^{u+k_t} v_t )
//       / ( same sums with v_i -> 1 )
// Prefix accumulators carry (p, q, m) with a = e^m * p, b = e^m * q and m the
// exact running maximum exponent, so arbitrary k magnitudes cannot overflow.
// The step transition is a' = e^{-w/T} a + e^{k_t} v_t.
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
struct WkvState {
    Real m, p, q;
};

template <class Real>
inline void wkv_absorb(WkvState<Real>& s, Real step, Real kt, Real vt) {
    const Real mdec = s.m + step;  // step = -w/T
    const Real mnew = mdec > kt ? mdec : kt;
    const Real e1 = std::exp(mdec - mnew);
    const Real e2 = std::exp(kt - mnew);
    s.p = s.p * e1 + vt * e2;
    s.q = s.q * e1 + e2;
    s.m = mnew;
}

template <class Real>
void bi_wkv_channel_forward(const Real* k, const Real* v, Real w, Real u, Real* y, std::int64_t t_len,
                            std::int64_t c_stride, Real* scratch) {
    const Real neg_inf = -std::numeric_limits<Real>::infinity();
    const Real step = -w / static_cast<Real>(t_len);
    // scratch layout: 6 arrays of t_len: mf pf qf mb pb qb
    Real* mf = scratch;
    Real* pf = scratch + t_len;
    Real* qf = scratch + 2 * t_len;
    Real* mb = scratch + 3 * t_len;
    Real* pb = scratch + 4 * t_len;
    Real* qb = scratch + 5 * t_len;

    WkvState<Real> s{neg_inf, Real(0), Real(0)};
    for (std::int64_t t = 0; t < t_len; ++t) {
        mf[t] = s.m;
        pf[t] = s.p;
        qf[t] = s.q;
        wkv_absorb(s, step, k[t * c_stride], v[t * c_stride]);
    }
    s = {neg_inf, Real(0), Real(0)};
    for (std::int64_t t = t_len - 1; t >= 0; --t) {
        mb[t] = s.m;
        pb[t] = s.p;
        qb[t] = s.q;
        wkv_absorb(s, step, k[t * c_stride], v[t * c_stride]);
    }
    for (std::int64_t t = 0; t < t_len; ++t) {
        const Real self_e = u + k[t * c_stride];
        Real big = mf[t] > mb[t] ? mf[t] : mb[t];
        if (self_e > big) big = self_e;
        const Real ef = std::exp(mf[t] - big);
        const Real eb = std::exp(mb[t] - big);
        const Real es = std::exp(self_e - big);
        const Real num = pf[t] * ef + pb[t] * eb + v[t * c_stride] * es;
        const Real den = qf[t] * ef + qb[t] * eb + es;
        y[t * c_stride] = num / den;
    }
}

// Extended state with distance-weighted components for the decay gradient:
//   pd = sum dist * e^{x-m} v,  qd = sum dist * e^{x-m}
// where dist is the decay-step count of the term (|t-i|-1 seen from t).
template <class Real>
struct WkvStateD {
    Real m, p, q, pd, qd;
};

template <class Real>
inline void wkv_absorb_d(WkvStateD<Real>& s, Real step, Real kt, Real vt) {
    const Real mdec = s.m + step;
    const Real mnew = mdec > kt ? mdec : kt;
    const Real e1 = std::exp(mdec - mnew);
    const Real e2 = std::exp(kt - mnew);
    s.pd = (s.pd + s.p) * e1;
    s.qd = (s.qd + s.q) * e1;
    s.p = s.p * e1 + vt * e2;
    s.q = s.q * e1 + e2;
    s.m = mnew;
}

// Signed-coefficient scan used for the gradient cross sums. Terms are
// c_i * e^{x_i - m} with x_i = -M_i - dist*w/T and two coefficient channels.
template <class Real>
struct WkvGradState {
    Real m, a, b;
};

template <class Real>
inline void wkv_absorb_grad(WkvGradState<Real>& s, Real step, Real xt, Real at, Real bt) {
    const Real mdec = s.m + step;
    const Real mnew = mdec > xt ? mdec : xt;
    const Real e1 = std::exp(mdec - mnew);
    const Real e2 = std::exp(xt - mnew);
    s.a = s.a * e1 + at * e2;
    s.b = s.b * e1 + bt * e2;
    s.m = mnew;
}

template <class Real>
void bi_wkv_channel_backward(const Real* k, const Real* v, Real w, Real u, const Real* gy, Real* gk, Real* gv,
                             Real* gw, Real* gu, std::int64_t t_len, std::int64_t c_stride, Real* scratch) {
    const Real neg_inf = -std::numeric_limits<Real>::infinity();
    const Real step = -w / static_cast<Real>(t_len);
    const Real inv_t = Real(1) / static_cast<Real>(t_len);

    // scratch layout: 16 arrays of t_len.
    Real* mf = scratch;
    Real* pf = scratch + t_len;
    Real* qf = scratch + 2 * t_len;
    Real* pdf = scratch + 3 * t_len;
    Real* qdf = scratch + 4 * t_len;
    Real* mb = scratch + 5 * t_len;
    Real* pb = scratch + 6 * t_len;
    Real* qb = scratch + 7 * t_len;
    Real* pdb = scratch + 8 * t_len;
    Real* qdb = scratch + 9 * t_len;
    Real* big = scratch + 10 * t_len;   // combined max exponent M_t
    Real* gnh = scratch + 11 * t_len;   // gn mantissa: gy / den_mantissa
    Real* gdh = scratch + 12 * t_len;   // gd mantissa: -gy * y / den_mantissa
    Real* ma = scratch + 13 * t_len;    // cross-scan max exponent per t
    Real* aa = scratch + 14 * t_len;    // cross sum of gn terms
    Real* bb = scratch + 15 * t_len;    // cross sum of gd terms

    WkvStateD<Real> s{neg_inf, Real(0), Real(0), Real(0), Real(0)};
    for (std::int64_t t = 0; t < t_len; ++t) {
        mf[t] = s.m;
        pf[t] = s.p;
        qf[t] = s.q;
        pdf[t] = s.pd;
        qdf[t] = s.qd;
        wkv_absorb_d(s, step, k[t * c_stride], v[t * c_stride]);
    }
    s = {neg_inf, Real(0), Real(0), Real(0), Real(0)};
    for (std::int64_t t = t_len - 1; t >= 0; --t) {
        mb[t] = s.m;
        pb[t] = s.p;
        qb[t] = s.q;
        pdb[t] = s.pd;
        qdb[t] = s.qd;
        wkv_absorb_d(s, step, k[t * c_stride], v[t * c_stride]);
    }

    for (std::int64_t t = 0; t < t_len; ++t) {
        const Real self_e = u + k[t * c_stride];
        Real m = mf[t] > mb[t] ? mf[t] : mb[t];
        if (self_e > m) m = self_e;
        const Real ef = std::exp(mf[t] - m);
        const Real eb = std::exp(mb[t] - m);
        const Real es = std::exp(self_e - m);
        const Real num = pf[t] * ef + pb[t] * eb + v[t * c_stride] * es;
        const Real den = qf[t] * ef + qb[t] * eb + es;
        const Real y = num / den;
        big[t] = m;
        gnh[t] = gy[t * c_stride] / den;
        gdh[t] = -gy[t * c_stride] * y / den;
    }

    // Cross sums A_t = sum_{i != t} e^{-dist*w/T} gn_i (and B_t from gd),
    // with gn_i carried as gnh_i * e^{-M_i}.
    WkvGradState<Real> gs{neg_inf, Real(0), Real(0)};
    for (std::int64_t t = 0; t < t_len; ++t) {
        ma[t] = gs.m;
        aa[t] = gs.a;
        bb[t] = gs.b;
        wkv_absorb_grad(gs, step, -big[t], gnh[t], gdh[t]);
    }
    gs = {neg_inf, Real(0), Real(0)};
    for (std::int64_t t = t_len - 1; t >= 0; --t) {
        const Real mc = ma[t] > gs.m ? ma[t] : gs.m;
        if (mc == neg_inf) {
            // T == 1: no cross terms on either side.
            aa[t] = Real(0);
            bb[t] = Real(0);
        } else {
            const Real e1 = std::exp(ma[t] - mc);
            const Real e2 = std::exp(gs.m - mc);
            const Real at = aa[t] * e1 + gs.a * e2;
            const Real bt = bb[t] * e1 + gs.b * e2;
            ma[t] = mc;
            aa[t] = at;
            bb[t] = bt;
        }
        wkv_absorb_grad(gs, step, -big[t], gnh[t], gdh[t]);
    }

    Real gw_acc = Real(0);
    Real gu_acc = Real(0);
    for (std::int64_t t = 0; t < t_len; ++t) {
        const Real kt = k[t * c_stride];
        const Real vt = v[t * c_stride];
        const Real cross = std::exp(kt + ma[t]);
        const Real self = std::exp(u + kt - big[t]);
        gv[t * c_stride] = cross * aa[t] + self * gnh[t];
        gk[t * c_stride] = cross * (vt * aa[t] + bb[t]) + self * (vt * gnh[t] + gdh[t]);
        gu_acc += self * (vt * gnh[t] + gdh[t]);
        const Real ef = std::exp(mf[t] - big[t]);
        const Real eb = std::exp(mb[t] - big[t]);
        gw_acc += gnh[t] * (pdf[t] * ef + pdb[t] * eb) + gdh[t] * (qdf[t] * ef + qdb[t] * eb);
    }
    *gw += -inv_t * gw_acc;
    *gu += gu_acc;
}

}  // namespace detail

// k, v, y are [T, C] row-major; w, u are [C].
template <class Real>
void bi_wkv_forward_serial(const Real* k, const Real* v, const Real* w, const Real* u, Real* y, std::int64_t t_len,
                           std::int64_t c_len) {
    std::vector<Real> scratch(static_cast<std::size_t>(6 * t_len));
    for (std::int64_t c = 0; c < c_len; ++c) {
        detail::bi_wkv_channel_forward(k + c, v + c, w[c], u[c], y + c, t_len, c_len, scratch.data());
    }
}

template <class Real>
void bi_wkv_forward(const Real* k, const Real* v, const Real* w, const Real* u, Real* y, std::int64_t t_len,
                    std::int64_t c_len) {
    const int threads = max_threads();
#pragma omp parallel num_threads(threads) if (threads > 1 && c_len > 1)
    {
        std::vector<Real> scratch(static_cast<std::size_t>(6 * t_len));
#pragma omp for schedule(static)
        for (std::int64_t c = 0; c < c_len; ++c) {
            detail::bi_wkv_channel_forward(k + c, v + c, w[c], u[c], y + c, t_len, c_len, scratch.data());
        }
    }
}

namespace detail {

// Gathers one channel into contiguous scratch, runs the stride-1 channel
// backward, scatters the token gradients back.
template <class Real>
void bi_wkv_backward_one_channel(const Real* k, const Real* v, const Real* w, const Real* u, const Real* gy, Real* gk,
                                 Real* gv, Real* gw, Real* gu, std::int64_t t_len, std::int64_t c_len, std::int64_t c,
                                 Real* scratch) {
    Real* kc = scratch + 16 * t_len;
    Real* vc = scratch + 17 * t_len;
    Real* gyc = scratch + 18 * t_len;
    Real* gkc = scratch + 19 * t_len;
    Real* gvc = scratch + 20 * t_len;
    for (std::int64_t t = 0; t < t_len; ++t) {
        kc[t] = k[t * c_len + c];
        vc[t] = v[t * c_len + c];
        gyc[t] = gy[t * c_len + c];
        gkc[t] = gvc[t] = Real(0);
    }
    bi_wkv_channel_backward(kc, vc, w[c], u[c], gyc, gkc, gvc, gw + c, gu + c, t_len, std::int64_t(1), scratch);
    for (std::int64_t t = 0; t < t_len; ++t) {
        gk[t * c_len + c] += gkc[t];
        gv[t * c_len + c] += gvc[t];
    }
}

}  // namespace detail

// Gradients are accumulated (+=) into gk, gv (same [T, C] layout) and the
// per-channel gw, gu.
template <class Real>
void bi_wkv_backward_serial(const Real* k, const Real* v, const Real* w, const Real* u, const Real* gy, Real* gk,
                            Real* gv, Real* gw, Real* gu, std::int64_t t_len, std::int64_t c_len) {
    std::vector<Real> scratch(static_cast<std::size_t>(21 * t_len));
    for (std::int64_t c = 0; c < c_len; ++c) {
        detail::bi_wkv_backward_one_channel(k, v, w, u, gy, gk, gv, gw, gu, t_len, c_len, c, scratch.data());
    }
}

template <class Real>
void bi_wkv_backward(const Real* k, const Real* v, const Real* w, const Real* u, const Real* gy, Real* gk, Real* gv,
                     Real* gw, Real* gu, std::int64_t t_len, std::int64_t c_len) {
    const int threads = max_threads();
#pragma omp parallel num_threads(threads) if (threads > 1 && c_len > 1)
    {
        std::vector<Real> scratch(static_cast<std::size_t>(21 * t_len));
#pragma omp for schedule(static)
        for (std::int64_t c = 0; c < c_len; ++c) {
            detail::bi_wkv_backward_one_channel(k, v, w, u, gy, gk, gv, gw, gu, t_len, c_len, c, scratch.data());
        }
    }
}

}  // namespace urwkv::kernels
