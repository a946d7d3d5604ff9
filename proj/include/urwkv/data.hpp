#pragma once

#include <filesystem>
#include <map>

#include "urwkv/metrics.hpp"
#include "urwkv/png_io.hpp"
#include "urwkv/random.hpp"

namespace urwkv {

// One paired image/mask sample. Image values live in [0,1] on an 8-bit grid
// so a PNG round trip is lossless; masks are strictly binary.
template <class Real>
struct SegSample {
    std::int64_t channels = 1, h = 0, w = 0;
    std::vector<Real> image;  // [C,H,W] row-major
    BinaryMask mask;
    std::string id;
};

// Dark background, 1-3 random ellipses (center/axes/rotation/intensity),
// additive Gaussian noise sigma=0.05, mask = exact ellipse union at pixel
// centers. Fully determined by the seed.
template <class Real>
std::vector<SegSample<Real>> gen_synthetic(std::uint64_t seed, std::int64_t n, std::int64_t size) {
    check(n >= 1 && size >= 8, "gen_synthetic: need n >= 1 and size >= 8");
    Rng rng(seed);
    std::vector<SegSample<Real>> out;
    out.reserve(static_cast<std::size_t>(n));
    const auto s = static_cast<double>(size);
    for (std::int64_t idx = 0; idx < n; ++idx) {
        SegSample<Real> sample;
        sample.channels = 1;
        sample.h = sample.w = size;
        sample.mask.h = sample.mask.w = size;
        sample.mask.data.assign(static_cast<std::size_t>(size * size), 0);
        std::vector<double> level(static_cast<std::size_t>(size * size), rng.uniform(0.05, 0.15));

        const auto count = rng.randint(1, 3);
        for (std::int64_t e = 0; e < count; ++e) {
            const double cx = rng.uniform(0.25 * s, 0.75 * s);
            const double cy = rng.uniform(0.25 * s, 0.75 * s);
            const double ax = rng.uniform(0.12 * s, 0.28 * s);
            const double ay = rng.uniform(0.12 * s, 0.28 * s);
            const double theta = rng.uniform(0.0, 3.14159265358979323846);
            const double intensity = rng.uniform(0.55, 0.95);
            const double ct = std::cos(theta), st = std::sin(theta);
            for (std::int64_t y = 0; y < size; ++y)
                for (std::int64_t x = 0; x < size; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx;
                    const double dy = static_cast<double>(y) + 0.5 - cy;
                    const double u = (dx * ct + dy * st) / ax;
                    const double v = (-dx * st + dy * ct) / ay;
                    if (u * u + v * v <= 1.0) {
                        const auto i = static_cast<std::size_t>(y * size + x);
                        sample.mask.data[i] = 1;
                        if (intensity > level[i]) level[i] = intensity;
                    }
                }
        }
        sample.image.resize(static_cast<std::size_t>(size * size));
        for (std::size_t i = 0; i < sample.image.size(); ++i) {
            double v = level[i] + 0.05 * rng.normal();
            v = std::min(1.0, std::max(0.0, v));
            // quantize to the 8-bit grid so disk round trips are exact
            v = std::round(v * 255.0) / 255.0;
            sample.image[i] = static_cast<Real>(v);
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%05lld", static_cast<long long>(idx));
        sample.id = std::string("sample_") + buf;
        out.push_back(std::move(sample));
    }
    return out;
}

template <class Real>
void write_dataset(const std::string& dir, const std::vector<SegSample<Real>>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    for (const auto& s : samples) {
        check(s.channels == 1, "write_dataset: only single-channel images are written as PNG");
        GrayImage img;
        img.h = s.h;
        img.w = s.w;
        img.data.resize(static_cast<std::size_t>(s.h * s.w));
        for (std::size_t i = 0; i < img.data.size(); ++i)
            img.data[i] = static_cast<std::uint8_t>(std::lround(static_cast<double>(s.image[i]) * 255.0));
        write_gray_png((fs::path(dir) / "images" / (s.id + ".png")).string(), img);
        GrayImage m;
        m.h = s.mask.h;
        m.w = s.mask.w;
        m.data.resize(s.mask.data.size());
        for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = s.mask.data[i] ? 255 : 0;
        write_gray_png((fs::path(dir) / "masks" / (s.id + ".png")).string(), m);
    }
}

// images/*.png with masks/*.png by matching stem, lexicographic order.
// Images scale to [0,1]; mask pixels >= 128 become foreground.
template <class Real>
std::vector<SegSample<Real>> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto img_dir = fs::path(dir) / "images";
    const auto mask_dir = fs::path(dir) / "masks";
    check(fs::is_directory(img_dir), "load_dataset: missing directory '" + img_dir.string() + "'");
    check(fs::is_directory(mask_dir), "load_dataset: missing directory '" + mask_dir.string() + "'");

    std::map<std::string, fs::path> stems;
    for (const auto& e : fs::directory_iterator(img_dir)) {
        if (e.path().extension() == ".png") stems.emplace(e.path().stem().string(), e.path());
    }
    check(!stems.empty(), "load_dataset: no PNG images under '" + img_dir.string() + "'");

    std::vector<SegSample<Real>> out;
    for (const auto& [stem, img_path] : stems) {
        const auto mask_path = mask_dir / (stem + ".png");
        check(fs::exists(mask_path), "load_dataset: image '" + stem + "' has no mask file '" + mask_path.string() + "'");
        const auto img = read_gray_png(img_path.string());
        const auto msk = read_gray_png(mask_path.string());
        check(img.h == msk.h && img.w == msk.w,
              "load_dataset: size mismatch between image and mask for '" + stem + "'");
        SegSample<Real> s;
        s.channels = 1;
        s.h = img.h;
        s.w = img.w;
        s.id = stem;
        s.image.resize(img.data.size());
        for (std::size_t i = 0; i < img.data.size(); ++i)
            s.image[i] = static_cast<Real>(static_cast<double>(img.data[i]) / 255.0);
        s.mask.h = msk.h;
        s.mask.w = msk.w;
        s.mask.data.resize(msk.data.size());
        for (std::size_t i = 0; i < msk.data.size(); ++i) s.mask.data[i] = msk.data[i] >= 128 ? 1 : 0;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace urwkv
