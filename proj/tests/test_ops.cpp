#include <doctest.h>

#include "urwkv/mix.hpp"
#include "urwkv/quadscan.hpp"
#include "support.hpp"

using namespace urwkv;
using urwkv::testing::adjoint_error;

namespace {
Tensor<double> none;
}

TEST_CASE("conv2d pointwise scaling on a ones map") {
    auto x = Tensor<double>::ones({1, 1, 3, 3});
    auto w = Tensor<double>::from_data({1, 1, 1, 1}, {2.0});
    auto y = ops::conv2d(x, w, none, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (auto v : y.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv2d zero input exposes the bias") {
    auto x = Tensor<double>::zeros({1, 1, 3, 3});
    auto w = Tensor<double>::zeros({1, 1, 3, 3});
    auto b = Tensor<double>::from_data({1}, {5.0});
    auto y = ops::conv2d(x, w, b, 1, 1);
    for (auto v : y.data()) CHECK(v == doctest::Approx(5.0));
}

TEST_CASE("conv2d full-kernel sum of 1..9 is 45") {
    auto x = Tensor<double>::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = Tensor<double>::ones({1, 1, 3, 3});
    auto y = ops::conv2d(x, w, none, 1, 0);
    CHECK(y.size() == 1);
    CHECK(y.item() == doctest::Approx(45.0));
}

TEST_CASE("conv2d rejects bad shapes") {
    auto x = Tensor<double>::ones({1, 2, 3, 3});
    auto w = Tensor<double>::ones({1, 1, 3, 3});
    CHECK_THROWS_WITH_AS(ops::conv2d(x, w, none, 1, 0), doctest::Contains("Cin/groups"), std::runtime_error);
    auto w2 = Tensor<double>::ones({1, 2, 5, 5});
    CHECK_THROWS_WITH_AS(ops::conv2d(x, w2, none, 1, 0), doctest::Contains("zero-size"), std::runtime_error);
}

TEST_CASE("conv_transpose2d broadcasts a single pixel") {
    auto x = Tensor<double>::from_data({1, 1, 1, 1}, {1.0});
    auto w = Tensor<double>::ones({1, 1, 2, 2});
    auto y = ops::conv_transpose2d(x, w, none, 2, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (auto v : y.data()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("conv_transpose2d zero input exposes the bias") {
    auto x = Tensor<double>::zeros({1, 2, 2, 2});
    auto w = Tensor<double>::zeros({2, 1, 2, 2});
    auto b = Tensor<double>::from_data({1}, {-3.5});
    auto y = ops::conv_transpose2d(x, w, b, 2, 0);
    for (auto v : y.data()) CHECK(v == doctest::Approx(-3.5));
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    // <conv(x), y> == <x, convT(y)> for the stride-2 2x2 kernel
    Rng rng(31);
    auto w = Tensor<double>::randn({1, 1, 2, 2}, rng);   // conv weight [Cout,Cin,kh,kw]
    auto x = Tensor<double>::randn({1, 1, 4, 4}, rng);
    auto y = Tensor<double>::randn({1, 1, 2, 2}, rng);
    auto cx = ops::conv2d(x, w, none, 2, 0);
    auto cty = ops::conv_transpose2d(y, w, none, 2, 0);
    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < cx.size(); ++i) lhs += cx.data()[i] * y.data()[i];
    for (std::int64_t i = 0; i < x.size(); ++i) rhs += x.data()[i] * cty.data()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

    // block-tiled case: 2x2 input, 2x2 weight, stride 2 -> 4x4
    auto x2 = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    auto t = ops::conv_transpose2d(x2, w, none, 2, 0);
    CHECK(t.shape() == Shape{1, 1, 4, 4});
    CHECK(t.data()[0] == doctest::Approx(w.data()[0] * 1.0));
    CHECK(t.data()[15] == doctest::Approx(w.data()[3] * 4.0));
}

TEST_CASE("batch_norm constant channels collapse to beta in training mode") {
    std::vector<double> vals(2 * 2 * 3 * 3);
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = (i / 9) % 2 ? 7.0 : -2.0;
    auto x = Tensor<double>::from_data({2, 2, 3, 3}, vals);
    auto gamma = Tensor<double>::ones({2});
    auto beta = Tensor<double>::from_data({2}, {0.5, -1.5});
    auto rm = Tensor<double>::zeros({2});
    auto rv = Tensor<double>::ones({2});
    auto y = ops::batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t c = 0; c < 2; ++c)
            for (std::int64_t i = 0; i < 9; ++i)
                CHECK(y.data()[static_cast<std::size_t>((n * 2 + c) * 9 + i)] ==
                      doctest::Approx(beta.data()[static_cast<std::size_t>(c)]));
}

TEST_CASE("batch_norm eval mode with unit stats is an identity") {
    Rng rng(7);
    auto x = Tensor<double>::randn({1, 3, 2, 2}, rng);
    auto gamma = Tensor<double>::ones({3});
    auto beta = Tensor<double>::zeros({3});
    auto rm = Tensor<double>::zeros({3});
    auto rv = Tensor<double>::ones({3});
    auto y = ops::batch_norm(x, gamma, beta, rm, rv, false, 0.1, 1e-5);
    for (std::int64_t i = 0; i < x.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-4));
}

TEST_CASE("batch_norm training output has mean beta and std gamma per channel") {
    Rng rng(8);
    auto x = Tensor<double>::randn({2, 3, 4, 4}, rng, 2.5);
    auto gamma = Tensor<double>::from_data({3}, {1.0, 2.0, 0.5});
    auto beta = Tensor<double>::from_data({3}, {0.0, 1.0, -1.0});
    auto rm = Tensor<double>::zeros({3});
    auto rv = Tensor<double>::ones({3});
    auto y = ops::batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
    for (std::int64_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        std::int64_t count = 0;
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t i = 0; i < 16; ++i) {
                mean += y.data()[static_cast<std::size_t>((n * 3 + c) * 16 + i)];
                ++count;
            }
        mean /= count;
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t i = 0; i < 16; ++i) {
                const double d = y.data()[static_cast<std::size_t>((n * 3 + c) * 16 + i)] - mean;
                var += d * d;
            }
        var /= count;
        CHECK(mean == doctest::Approx(beta.data()[static_cast<std::size_t>(c)]).epsilon(1e-6));
        CHECK(std::sqrt(var) == doctest::Approx(gamma.data()[static_cast<std::size_t>(c)]).epsilon(1e-3));
    }
}

TEST_CASE("batch_norm rejects a single-element batch in training mode") {
    auto x = Tensor<double>::ones({1, 2, 1, 1});
    auto gamma = Tensor<double>::ones({2});
    auto beta = Tensor<double>::zeros({2});
    auto rm = Tensor<double>::zeros({2});
    auto rv = Tensor<double>::ones({2});
    CHECK_THROWS_WITH_AS(ops::batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5),
                         doctest::Contains("degenerate"), std::runtime_error);
}

TEST_CASE("layer_norm constant token collapses to beta") {
    auto x = Tensor<double>::full({2, 4}, 3.25);
    auto gamma = Tensor<double>::ones({4});
    auto beta = Tensor<double>::from_data({4}, {1, 2, 3, 4});
    auto y = ops::layer_norm(x, gamma, beta, 1e-5);
    for (std::int64_t t = 0; t < 2; ++t)
        for (std::int64_t c = 0; c < 4; ++c)
            CHECK(y.data()[static_cast<std::size_t>(t * 4 + c)] ==
                  doctest::Approx(beta.data()[static_cast<std::size_t>(c)]));
}

TEST_CASE("layer_norm standardizes each token") {
    Rng rng(9);
    auto x = Tensor<double>::randn({3, 16}, rng, 3.0);
    auto gamma = Tensor<double>::ones({16});
    auto beta = Tensor<double>::zeros({16});
    auto y = ops::layer_norm(x, gamma, beta, 1e-8);
    for (std::int64_t t = 0; t < 3; ++t) {
        double mean = 0, var = 0;
        for (std::int64_t c = 0; c < 16; ++c) mean += y.data()[static_cast<std::size_t>(t * 16 + c)];
        mean /= 16;
        for (std::int64_t c = 0; c < 16; ++c) {
            const double d = y.data()[static_cast<std::size_t>(t * 16 + c)] - mean;
            var += d * d;
        }
        var /= 16;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("layer_norm single-channel tokens collapse to beta") {
    auto x = Tensor<double>::from_data({3, 1}, {5.0, -2.0, 0.5});
    auto gamma = Tensor<double>::ones({1});
    auto beta = Tensor<double>::from_data({1}, {0.75});
    auto y = ops::layer_norm(x, gamma, beta, 1e-5);
    for (auto v : y.data()) CHECK(v == doctest::Approx(0.75));
}

TEST_CASE("layer_norm rejects an empty channel axis") {
    auto x = Tensor<double>::from_data({2, 0}, {});
    auto gb = Tensor<double>::from_data({0}, {});
    CHECK_THROWS(ops::layer_norm(x, gb, gb, 1e-5));
}

TEST_CASE("linear basics") {
    auto x = Tensor<double>::from_data({1, 2}, {1, 2});
    auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    auto y = ops::matmul(x, eye);
    CHECK(y.data() == x.data());
    auto zero = Tensor<double>::zeros({2, 2});
    auto xz = ops::matmul(x, zero);
    for (auto v : xz.data()) CHECK(v == 0.0);
    auto w = Tensor<double>::from_data({2, 2}, {1, 0, 1, 1});
    auto z = ops::matmul(x, w);
    CHECK(z.data()[0] == doctest::Approx(3.0));
    CHECK(z.data()[1] == doctest::Approx(2.0));
    CHECK_THROWS(ops::matmul(x, Tensor<double>::zeros({3, 2})));
}

TEST_CASE("soft dice loss vanishes at a perfect prediction") {
    Rng rng(33);
    std::vector<double> t(2 * 16);
    for (auto& v : t) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
    std::vector<double> logits(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) logits[i] = t[i] > 0.5 ? 30.0 : -30.0;
    auto lt = Tensor<double>::from_data({2, 16}, std::move(logits));
    auto tt = Tensor<double>::from_data({2, 16}, std::move(t));
    CHECK(ops::soft_dice_loss(lt, tt, 1.0).item() < 1e-9);
    CHECK(ops::bce_with_logits(lt, tt).item() < 1e-9);
}

TEST_CASE("inner-product adjoint identity holds for every primitive") {
    Rng rng(1001);
    const double tol = 1e-8;
    auto mk = [&](Shape s, double scale = 1.0) { return Tensor<double>::randn(std::move(s), rng, scale, true); };

    SUBCASE("elementwise and reductions") {
        auto a = mk({3, 5}), b = mk({3, 5});
        CHECK(adjoint_error([&] { return ops::add(a, b); }, {a, b}, 1) < tol);
        CHECK(adjoint_error([&] { return ops::mul(a, b); }, {a, b}, 2) < tol);
        CHECK(adjoint_error([&] { return ops::scale(a, -1.7); }, {a}, 3) < tol);
        CHECK(adjoint_error([&] { return ops::sigmoid(a); }, {a}, 4) < tol);
        CHECK(adjoint_error([&] { return ops::square(a); }, {a}, 5) < tol);
        CHECK(adjoint_error([&] { return ops::reshape(ops::sum(a), {1, 1}); }, {a}, 6) < tol);
        auto bias = mk({5});
        CHECK(adjoint_error([&] { return ops::add_rowvec(a, bias); }, {a, bias}, 7) < tol);
        // keep relu away from its kinks
        auto c = Tensor<double>::from_data({4}, {1.0, -2.0, 3.0, -0.5}, true);
        CHECK(adjoint_error([&] { return ops::relu(c); }, {c}, 8) < tol);
    }

    SUBCASE("matmul and convolutions") {
        auto a = mk({4, 3}), b = mk({3, 5});
        CHECK(adjoint_error([&] { return ops::matmul(a, b); }, {a, b}, 10) < tol);
        auto x = mk({2, 4, 5, 5});
        auto w = mk({6, 4, 3, 3});
        auto bias = mk({6});
        CHECK(adjoint_error([&] { return ops::conv2d(x, w, bias, 2, 1); }, {x, w, bias}, 11) < tol);
        auto wg = mk({4, 1, 3, 3});
        CHECK(adjoint_error([&] { return ops::conv2d(x, wg, none, 1, 2, 2, 4); }, {x, wg}, 12) < tol);
        auto wt = mk({4, 3, 2, 2});
        auto bt = mk({3});
        CHECK(adjoint_error([&] { return ops::conv_transpose2d(x, wt, bt, 2, 0); }, {x, wt, bt}, 13) < tol);
    }

    SUBCASE("normalization") {
        auto x = mk({2, 3, 4, 4});
        auto gamma = mk({3}), beta = mk({3});
        auto rm = Tensor<double>::zeros({3});
        auto rv = Tensor<double>::ones({3});
        CHECK(adjoint_error([&] { return ops::batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5); },
                            {x, gamma, beta}, 14) < tol);
        CHECK(adjoint_error([&] { return ops::batch_norm(x, gamma, beta, rm, rv, false, 0.1, 1e-5); },
                            {x, gamma, beta}, 15) < tol);
        auto s = mk({5, 6});
        auto g2 = mk({6}), b2 = mk({6});
        CHECK(adjoint_error([&] { return ops::layer_norm(s, g2, b2, 1e-5); }, {s, g2, b2}, 16) < tol);
    }

    SUBCASE("shape and gating ops") {
        auto x = mk({2, 4, 3, 3});
        auto g = mk({2, 4});
        CHECK(adjoint_error([&] { return ops::global_avg_pool(x); }, {x}, 20) < tol);
        CHECK(adjoint_error([&] { return ops::scale_channels(x, g); }, {x, g}, 21) < tol);
        auto y2 = mk({2, 3, 3, 3});
        CHECK(adjoint_error([&] { return ops::concat_channels(x, y2); }, {x, y2}, 22) < tol);
        CHECK(adjoint_error([&] { return ops::select_batch(x, 1); }, {x}, 23) < tol);
        auto p0 = mk({4, 3, 3}), p1 = mk({4, 3, 3});
        CHECK(adjoint_error([&] { return ops::stack_batch<double>({p0, p1}); }, {p0, p1}, 24) < tol);
        auto s = mk({6, 3});
        CHECK(adjoint_error([&] { return ops::reverse_tokens(s); }, {s}, 25) < tol);
        CHECK(adjoint_error([&] { return ops::reshape(ops::pick_pixel_sum(x, 1, 2), {1}); }, {x}, 26) < tol);
    }

    SUBCASE("scan reindexing") {
        auto x = mk({3, 4, 5});
        for (auto dir : all_scan_directions) {
            CHECK(adjoint_error([&] { return ops::scan(x, dir); }, {x}, 30) < tol);
        }
        auto s = mk({20, 3});
        CHECK(adjoint_error([&] { return ops::unscan(s, ScanDirection::TB, 4, 5); }, {s}, 31) < tol);
        auto xm = mk({4, 3, 3});
        auto mix = Tensor<double>::uniform({4}, rng, 0.1, 0.9, true);
        CHECK(adjoint_error([&] { return ops::vision2seq(xm, mix); }, {xm, mix}, 32) < tol);
    }

    SUBCASE("wkv") {
        auto k = mk({7, 3}), v = mk({7, 3});
        auto w = Tensor<double>::uniform({3}, rng, -1, 1, true);
        auto u = Tensor<double>::uniform({3}, rng, -1, 1, true);
        CHECK(adjoint_error([&] { return ops::bi_wkv_scan(k, v, w, u); }, {k, v, w, u}, 40) < tol);
        CHECK(adjoint_error([&] { return ops::bi_wkv_naive(k, v, w, u); }, {k, v, w, u}, 41) < tol);
    }

    SUBCASE("losses") {
        auto logits = mk({2, 1, 4, 4});
        auto targets = Tensor<double>::from_data({2, 1, 4, 4}, [&] {
            std::vector<double> t(32);
            for (auto& v : t) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;
            return t;
        }());
        CHECK(adjoint_error([&] { return ops::reshape(ops::bce_with_logits(logits, targets), {1}); }, {logits}, 50) <
              tol);
        CHECK(adjoint_error([&] { return ops::reshape(ops::soft_dice_loss(logits, targets, 1.0), {1}); }, {logits},
                            51) < tol);
    }
}
