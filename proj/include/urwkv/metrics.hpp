#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "urwkv/common.hpp"

namespace urwkv {

struct BinaryMask {
    std::int64_t h = 0, w = 0;
    std::vector<std::uint8_t> data;  // strictly 0/1, row-major

    std::uint8_t at(std::int64_t y, std::int64_t x) const { return data[static_cast<std::size_t>(y * w + x)]; }
};

namespace detail {

inline void check_pair(const BinaryMask& a, const BinaryMask& b, const char* who) {
    check(a.h == b.h && a.w == b.w, std::string(who) + ": mask shapes differ");
    check(static_cast<std::int64_t>(a.data.size()) == a.h * a.w &&
              static_cast<std::int64_t>(b.data.size()) == b.h * b.w,
          std::string(who) + ": mask data does not match extents");
    for (auto v : a.data) check(v <= 1, std::string(who) + ": mask values must be strictly binary");
    for (auto v : b.data) check(v <= 1, std::string(who) + ": mask values must be strictly binary");
}

inline void overlap_counts(const BinaryMask& a, const BinaryMask& b, std::int64_t& inter, std::int64_t& ca,
                           std::int64_t& cb) {
    inter = ca = cb = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        ca += a.data[i];
        cb += b.data[i];
        inter += a.data[i] & b.data[i];
    }
}

}  // namespace detail

// 2|A∩B| / (|A|+|B|); both masks empty counts as a perfect match.
inline double dice(const BinaryMask& pred, const BinaryMask& gt) {
    detail::check_pair(pred, gt, "dice");
    std::int64_t inter, ca, cb;
    detail::overlap_counts(pred, gt, inter, ca, cb);
    if (ca + cb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

// |A∩B| / |A∪B|; both empty -> 1.
inline double iou(const BinaryMask& pred, const BinaryMask& gt) {
    detail::check_pair(pred, gt, "iou");
    std::int64_t inter, ca, cb;
    detail::overlap_counts(pred, gt, inter, ca, cb);
    const std::int64_t uni = ca + cb - inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Foreground pixels with a 4-neighbor outside the mask (image edges count).
inline std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const BinaryMask& m) {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (std::int64_t y = 0; y < m.h; ++y)
        for (std::int64_t x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            const bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1;
            if (edge || !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1)) out.emplace_back(y, x);
        }
    return out;
}

// 95th percentile (nearest-rank) of the symmetric set of nearest-boundary
// distances, brute force over the two boundary pixel sets.
inline double hd95(const BinaryMask& pred, const BinaryMask& gt, double spacing_y = 1.0, double spacing_x = 1.0) {
    detail::check_pair(pred, gt, "hd95");
    const auto ba = boundary_pixels(pred);
    const auto bb = boundary_pixels(gt);
    check(!ba.empty() && !bb.empty(), "hd95: undefined for an empty mask");

    std::vector<double> dists;
    dists.reserve(ba.size() + bb.size());
    auto nearest = [&](const std::pair<std::int64_t, std::int64_t>& p,
                       const std::vector<std::pair<std::int64_t, std::int64_t>>& set) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : set) {
            const double dy = static_cast<double>(p.first - q.first) * spacing_y;
            const double dx = static_cast<double>(p.second - q.second) * spacing_x;
            const double d = dy * dy + dx * dx;
            if (d < best) best = d;
        }
        return std::sqrt(best);
    };
    for (const auto& p : ba) dists.push_back(nearest(p, bb));
    for (const auto& p : bb) dists.push_back(nearest(p, ba));
    std::sort(dists.begin(), dists.end());
    const auto n = static_cast<std::int64_t>(dists.size());
    const auto rank = static_cast<std::int64_t>(std::ceil(0.95 * static_cast<double>(n)));
    return dists[static_cast<std::size_t>(std::max<std::int64_t>(rank, 1) - 1)];
}

}  // namespace urwkv
