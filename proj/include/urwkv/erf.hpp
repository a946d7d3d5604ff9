#pragma once

#include <fstream>

#include "urwkv/model.hpp"
#include "urwkv/png_io.hpp"

namespace urwkv {

// Input-gradient saliency of the center output pixel, averaged over probe
// samples and input channels and normalized to sum 1.
struct ErfMap {
    std::int64_t h = 0, w = 0;
    std::vector<double> heat;
    // provenance
    std::string model_id;
    std::int64_t sample_count = 0;
    std::vector<double> threshold_grid{0.50, 0.90, 0.95, 0.99};
};

// fwd maps a [1,Cin,H,W] tensor to [1,K,H',W'] logits.
template <class Real, class Fwd>
ErfMap erf_map_fn(Fwd&& fwd, const Tensor<Real>& inputs, std::string model_id = "") {
    check(inputs.rank() == 4 && inputs.dim(0) >= 1, "erf_map: probe inputs must be [N,Cin,H,W]");
    const std::int64_t n = inputs.dim(0), cin = inputs.dim(1), h = inputs.dim(2), w = inputs.dim(3);
    ErfMap map;
    map.h = h;
    map.w = w;
    map.model_id = std::move(model_id);
    map.sample_count = n;
    map.heat.assign(static_cast<std::size_t>(h * w), 0.0);
    for (std::int64_t s = 0; s < n; ++s) {
        std::vector<Real> buf(inputs.data().begin() + s * cin * h * w, inputs.data().begin() + (s + 1) * cin * h * w);
        auto x = Tensor<Real>::from_data({std::int64_t(1), cin, h, w}, std::move(buf), /*requires_grad=*/true);
        auto y = fwd(x);
        check(y.rank() == 4, "erf_map: forward must produce [1,K,H,W] logits");
        auto loss = ops::pick_pixel_sum(y, y.dim(2) / 2, y.dim(3) / 2);
        loss.backward();
        const auto& g = x.grad();
        for (std::int64_t c = 0; c < cin; ++c)
            for (std::int64_t i = 0; i < h * w; ++i)
                map.heat[static_cast<std::size_t>(i)] += std::abs(static_cast<double>(g[static_cast<std::size_t>(c * h * w + i)]));
    }
    double total = 0.0;
    for (auto v : map.heat) total += v;
    check(total > 0.0, "erf_map: degenerate all-zero gradient field");
    for (auto& v : map.heat) v /= total;
    return map;
}

template <class Real>
ErfMap erf_map(Model<Real>& m, const Tensor<Real>& inputs) {
    return erf_map_fn([&m](const Tensor<Real>& x) { return forward(m, x, /*training=*/false); }, inputs,
                      m.cfg.variant + "/" + std::to_string(m.cfg.seed));
}

// Smallest fraction of pixels whose sorted contributions reach threshold t.
inline double high_contribution_ratio(const ErfMap& map, double t) {
    check(t > 0.0 && t <= 1.0, "high_contribution_ratio: threshold must lie in (0,1]");
    std::vector<double> sorted(map.heat);
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double acc = 0.0;
    std::size_t k = 0;
    while (k < sorted.size() && acc < t) {
        acc += sorted[k];
        ++k;
    }
    return static_cast<double>(k) / static_cast<double>(sorted.size());
}

// 8-bit grayscale, max-normalized.
inline void write_heatmap_png(const ErfMap& map, const std::string& path) {
    double peak = 0.0;
    for (auto v : map.heat) peak = std::max(peak, v);
    GrayImage img;
    img.h = map.h;
    img.w = map.w;
    img.data.resize(map.heat.size());
    for (std::size_t i = 0; i < map.heat.size(); ++i)
        img.data[i] = peak > 0.0 ? static_cast<std::uint8_t>(std::lround(map.heat[i] / peak * 255.0)) : 0;
    write_gray_png(path, img);
}

inline void write_ratio_csv(const std::string& path,
                            const std::vector<std::string>& names,
                            const std::vector<double>& thresholds,
                            const std::vector<std::vector<double>>& ratios) {
    std::ofstream f(path, std::ios::trunc);
    check(f.good(), "write_ratio_csv: cannot open '" + path + "'");
    f << "threshold";
    for (const auto& n : names) f << "," << n;
    f << "\n";
    f.precision(12);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        f << thresholds[i];
        for (const auto& col : ratios) f << "," << col[i];
        f << "\n";
    }
}

}  // namespace urwkv
