#include <doctest.h>

#include "urwkv/metrics.hpp"
#include "urwkv/random.hpp"

using namespace urwkv;

namespace {

BinaryMask mask_of(std::int64_t h, std::int64_t w, std::initializer_list<int> vals) {
    BinaryMask m;
    m.h = h;
    m.w = w;
    for (auto v : vals) m.data.push_back(static_cast<std::uint8_t>(v));
    return m;
}

BinaryMask random_mask(Rng& rng, std::int64_t h, std::int64_t w, double p) {
    BinaryMask m;
    m.h = h;
    m.w = w;
    m.data.resize(static_cast<std::size_t>(h * w));
    for (auto& v : m.data) v = rng.uniform01() < p ? 1 : 0;
    return m;
}

}  // namespace

TEST_CASE("dice and iou basic cases") {
    auto a = mask_of(2, 2, {1, 1, 0, 0});
    CHECK(dice(a, a) == 1.0);
    CHECK(iou(a, a) == 1.0);
    auto b = mask_of(2, 2, {0, 0, 1, 1});
    CHECK(dice(a, b) == 0.0);
    CHECK(iou(a, b) == 0.0);
    // pred = top row, gt = left column
    auto top = mask_of(2, 2, {1, 1, 0, 0});
    auto left = mask_of(2, 2, {1, 0, 1, 0});
    CHECK(dice(top, left) == doctest::Approx(0.5));
    CHECK(iou(top, left) == doctest::Approx(1.0 / 3.0));
    // both empty count as a perfect match
    auto empty = mask_of(2, 2, {0, 0, 0, 0});
    CHECK(dice(empty, empty) == 1.0);
    CHECK(iou(empty, empty) == 1.0);
    CHECK_THROWS(dice(a, mask_of(1, 2, {1, 0})));
}

TEST_CASE("masks must be strictly binary") {
    BinaryMask bad;
    bad.h = bad.w = 1;
    bad.data = {2};
    CHECK_THROWS(dice(bad, bad));
}

TEST_CASE("hd95 basic cases") {
    auto a = mask_of(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    CHECK(hd95(a, a) == 0.0);
    // two single pixels three apart along an axis
    auto p = mask_of(1, 5, {1, 0, 0, 0, 0});
    auto q = mask_of(1, 5, {0, 0, 0, 1, 0});
    CHECK(hd95(p, q) == doctest::Approx(3.0));
    // spacing scales distances
    CHECK(hd95(p, q, 1.0, 2.0) == doctest::Approx(6.0));
    auto empty = mask_of(1, 5, {0, 0, 0, 0, 0});
    CHECK_THROWS_WITH_AS(hd95(p, empty), doctest::Contains("empty"), std::runtime_error);
}

TEST_CASE("hd95 is symmetric and matches an exhaustive-sort oracle") {
    Rng rng(101);
    for (int it = 0; it < 30; ++it) {
        auto a = random_mask(rng, 16, 16, 0.3);
        auto b = random_mask(rng, 16, 16, 0.3);
        bool a_any = false, b_any = false;
        for (auto v : a.data) a_any |= v != 0;
        for (auto v : b.data) b_any |= v != 0;
        if (!a_any || !b_any) continue;

        CHECK(hd95(a, b) == doctest::Approx(hd95(b, a)));

        // oracle: full pairwise distances, exhaustive sort, nearest rank
        auto ba = boundary_pixels(a);
        auto bb = boundary_pixels(b);
        std::vector<double> ds;
        auto push_nearest = [&](const auto& from, const auto& to) {
            for (const auto& pp : from) {
                double best = 1e300;
                for (const auto& qq : to) {
                    const double dy = static_cast<double>(pp.first - qq.first);
                    const double dx = static_cast<double>(pp.second - qq.second);
                    best = std::min(best, std::sqrt(dy * dy + dx * dx));
                }
                ds.push_back(best);
            }
        };
        push_nearest(ba, bb);
        push_nearest(bb, ba);
        std::sort(ds.begin(), ds.end());
        const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ds.size())));
        CHECK(hd95(a, b) == doctest::Approx(ds[std::max<std::size_t>(rank, 1) - 1]).epsilon(1e-12));
    }
}

TEST_CASE("metric bounds and the dice-iou identity") {
    Rng rng(102);
    for (int it = 0; it < 100; ++it) {
        auto a = random_mask(rng, 8, 8, rng.uniform01());
        auto b = random_mask(rng, 8, 8, rng.uniform01());
        const double d = dice(a, b);
        const double j = iou(a, b);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
        CHECK(j >= 0.0);
        CHECK(j <= 1.0);
        CHECK(d >= j);
        CHECK(std::abs(d - 2.0 * j / (1.0 + j)) <= 1e-12);
    }
}
