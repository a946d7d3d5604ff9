#pragma once

#include <array>
#include <string>

#include "urwkv/tensor.hpp"

namespace urwkv {

// Four traversal orders of a [C,H,W] map. LR is row-major (token t reads
// pixel h=t/W, w=t%W), RL its reverse; TB is column-major (token t reads
// h=t%H, w=t/H), BT its reverse. Channels ride along untouched.
enum class ScanDirection { LR, RL, TB, BT };

constexpr std::array<ScanDirection, 4> all_scan_directions{ScanDirection::LR, ScanDirection::RL, ScanDirection::TB,
                                                           ScanDirection::BT};

inline const char* to_string(ScanDirection d) {
    switch (d) {
        case ScanDirection::LR: return "LR";
        case ScanDirection::RL: return "RL";
        case ScanDirection::TB: return "TB";
        case ScanDirection::BT: return "BT";
    }
    return "?";
}

inline ScanDirection scan_direction_from_string(const std::string& s) {
    if (s == "LR") return ScanDirection::LR;
    if (s == "RL") return ScanDirection::RL;
    if (s == "TB") return ScanDirection::TB;
    if (s == "BT") return ScanDirection::BT;
    fail("unknown scan direction '" + s + "' (expected LR, RL, TB or BT)");
}

// Flat pixel index (h*W + w) read by token t.
inline std::int64_t scan_source_index(ScanDirection d, std::int64_t h, std::int64_t w, std::int64_t t) {
    const std::int64_t total = h * w;
    switch (d) {
        case ScanDirection::LR: return t;
        case ScanDirection::RL: return total - 1 - t;
        case ScanDirection::TB: return (t % h) * w + (t / h);
        case ScanDirection::BT: {
            const std::int64_t r = total - 1 - t;
            return (r % h) * w + (r / h);
        }
    }
    return 0;
}

namespace ops {

// [C,H,W] -> [T=H*W, C], bijective reindexing.
template <class Real>
Tensor<Real> scan(const Tensor<Real>& x, ScanDirection dir) {
    check(x.rank() == 3, "scan: input must be [C,H,W], got " + shape_str(x.shape()));
    const std::int64_t c_len = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::int64_t t_len = h * w;
    std::vector<Real> out(static_cast<std::size_t>(t_len * c_len));
    for (std::int64_t t = 0; t < t_len; ++t) {
        const std::int64_t src = scan_source_index(dir, h, w, t);
        for (std::int64_t c = 0; c < c_len; ++c)
            out[static_cast<std::size_t>(t * c_len + c)] = x.data()[static_cast<std::size_t>(c * t_len + src)];
    }
    auto y = Tensor<Real>::from_data(Shape{t_len, c_len}, std::move(out));
    auto xn = x.node();
    auto* yn = y.node().get();
    detail::attach(y, {&x}, [xn, yn, dir, h, w, c_len, t_len]() {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t t = 0; t < t_len; ++t) {
            const std::int64_t src = scan_source_index(dir, h, w, t);
            for (std::int64_t c = 0; c < c_len; ++c)
                xn->grad[static_cast<std::size_t>(c * t_len + src)] += yn->grad[static_cast<std::size_t>(t * c_len + c)];
        }
    });
    return y;
}

// Exact inverse of scan: unscan(scan(x,d),d,H,W) == x bitwise.
template <class Real>
Tensor<Real> unscan(const Tensor<Real>& seq, ScanDirection dir, std::int64_t h, std::int64_t w) {
    check(seq.rank() == 2, "unscan: input must be [T,C], got " + shape_str(seq.shape()));
    const std::int64_t t_len = seq.dim(0), c_len = seq.dim(1);
    check(t_len == h * w, "unscan: sequence length " + std::to_string(t_len) + " != H*W = " + std::to_string(h * w));
    std::vector<Real> out(static_cast<std::size_t>(seq.size()));
    for (std::int64_t t = 0; t < t_len; ++t) {
        const std::int64_t dst = scan_source_index(dir, h, w, t);
        for (std::int64_t c = 0; c < c_len; ++c)
            out[static_cast<std::size_t>(c * t_len + dst)] = seq.data()[static_cast<std::size_t>(t * c_len + c)];
    }
    auto y = Tensor<Real>::from_data(Shape{c_len, h, w}, std::move(out));
    auto sn = seq.node();
    auto* yn = y.node().get();
    detail::attach(y, {&seq}, [sn, yn, dir, h, w, c_len, t_len]() {
        if (!sn->requires_grad) return;
        sn->ensure_grad();
        for (std::int64_t t = 0; t < t_len; ++t) {
            const std::int64_t dst = scan_source_index(dir, h, w, t);
            for (std::int64_t c = 0; c < c_len; ++c)
                sn->grad[static_cast<std::size_t>(t * c_len + c)] += yn->grad[static_cast<std::size_t>(c * t_len + dst)];
        }
    });
    return y;
}

// Plain row-major serialization.
template <class Real>
Tensor<Real> flatten_map(const Tensor<Real>& x) {
    return scan(x, ScanDirection::LR);
}

// Quarter-channel directional shift then row-major scan. Channel group g of
// four shifts the map one pixel toward {left,right,up,down}[g] with zero
// padding and blends with the original: y = (1-mix)*x + mix*shifted.
template <class Real>
Tensor<Real> vision2seq(const Tensor<Real>& x, const Tensor<Real>& mix) {
    check(x.rank() == 3, "vision2seq: input must be [C,H,W]");
    const std::int64_t c_len = x.dim(0), h = x.dim(1), w = x.dim(2);
    check(c_len % 4 == 0, "vision2seq: channel count " + std::to_string(c_len) + " not divisible by 4");
    check(mix.rank() == 1 && mix.dim(0) == c_len, "vision2seq: mix must be [C]");
    const std::int64_t plane = h * w;
    const std::int64_t group = c_len / 4;

    auto shifted_at = [&](const std::vector<Real>& v, std::int64_t c, std::int64_t hh, std::int64_t ww) -> Real {
        const std::int64_t g = c / group;
        std::int64_t sh = hh, sw = ww;
        switch (g) {
            case 0: sw = ww + 1; break;  // content moves left
            case 1: sw = ww - 1; break;  // right
            case 2: sh = hh + 1; break;  // up
            default: sh = hh - 1; break; // down
        }
        if (sh < 0 || sh >= h || sw < 0 || sw >= w) return Real(0);
        return v[static_cast<std::size_t>(c * plane + sh * w + sw)];
    };

    std::vector<Real> blended(static_cast<std::size_t>(x.size()));
    for (std::int64_t c = 0; c < c_len; ++c) {
        const Real m = mix.data()[static_cast<std::size_t>(c)];
        for (std::int64_t hh = 0; hh < h; ++hh)
            for (std::int64_t ww = 0; ww < w; ++ww) {
                const Real xv = x.data()[static_cast<std::size_t>(c * plane + hh * w + ww)];
                const Real sv = shifted_at(x.data(), c, hh, ww);
                blended[static_cast<std::size_t>(c * plane + hh * w + ww)] = (Real(1) - m) * xv + m * sv;
            }
    }
    // Row-major scan of the blended map.
    std::vector<Real> out(static_cast<std::size_t>(plane * c_len));
    for (std::int64_t t = 0; t < plane; ++t)
        for (std::int64_t c = 0; c < c_len; ++c)
            out[static_cast<std::size_t>(t * c_len + c)] = blended[static_cast<std::size_t>(c * plane + t)];

    auto y = Tensor<Real>::from_data(Shape{plane, c_len}, std::move(out));
    auto xn = x.node();
    auto mn = mix.node();
    auto* yn = y.node().get();
    detail::attach(y, {&x, &mix}, [xn, mn, yn, c_len, h, w, plane, group]() {
        auto unshifted_target = [&](std::int64_t c, std::int64_t hh, std::int64_t ww, std::int64_t& th,
                                    std::int64_t& tw) {
            const std::int64_t g = c / group;
            th = hh;
            tw = ww;
            switch (g) {
                case 0: tw = ww + 1; break;
                case 1: tw = ww - 1; break;
                case 2: th = hh + 1; break;
                default: th = hh - 1; break;
            }
            return th >= 0 && th < h && tw >= 0 && tw < w;
        };
        if (xn->requires_grad) xn->ensure_grad();
        if (mn->requires_grad) mn->ensure_grad();
        for (std::int64_t c = 0; c < c_len; ++c) {
            const Real m = mn->value[static_cast<std::size_t>(c)];
            Real gm = Real(0);
            for (std::int64_t hh = 0; hh < h; ++hh)
                for (std::int64_t ww = 0; ww < w; ++ww) {
                    const std::int64_t t = hh * w + ww;
                    const Real g = yn->grad[static_cast<std::size_t>(t * c_len + c)];
                    const Real xv = xn->value[static_cast<std::size_t>(c * plane + t)];
                    std::int64_t th, tw;
                    const bool in = unshifted_target(c, hh, ww, th, tw);
                    const Real sv = in ? xn->value[static_cast<std::size_t>(c * plane + th * w + tw)] : Real(0);
                    if (xn->requires_grad) {
                        xn->grad[static_cast<std::size_t>(c * plane + t)] += (Real(1) - m) * g;
                        if (in) xn->grad[static_cast<std::size_t>(c * plane + th * w + tw)] += m * g;
                    }
                    gm += g * (sv - xv);
                }
            if (mn->requires_grad) mn->grad[static_cast<std::size_t>(c)] += gm;
        }
    });
    return y;
}

}  // namespace ops
}  // namespace urwkv
