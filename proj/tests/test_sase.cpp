#include <doctest.h>

#include "urwkv/grad_check.hpp"
#include "urwkv/sase.hpp"
#include "support.hpp"

using namespace urwkv;

TEST_CASE("select_sase_mode follows the channel-to-resolution rule") {
    CHECK(select_sase_mode(16, 64, 64) == SaseMode::Shallow);
    CHECK(select_sase_mode(256, 8, 8) == SaseMode::Deep);
    CHECK(select_sase_mode(64, 8, 8) == SaseMode::Deep);  // boundary 64 >= 64 is inclusive
    CHECK(select_sase_mode(63, 8, 8) == SaseMode::Shallow);
    CHECK_THROWS(select_sase_mode(0, 4, 4));
}

TEST_CASE("sase_forward preserves the input shape in both modes") {
    Rng rng(71);
    auto shallow = SaseParams<double>::init(8, 8, 8, 4, rng);
    CHECK(shallow.mode == SaseMode::Shallow);
    auto deep = SaseParams<double>::init(16, 2, 2, 4, rng);
    CHECK(deep.mode == SaseMode::Deep);
    auto xs = Tensor<double>::randn({2, 8, 8, 8}, rng);
    CHECK(ops::sase_forward(xs, shallow, true).shape() == xs.shape());
    auto xd = Tensor<double>::randn({2, 16, 2, 2}, rng);
    CHECK(ops::sase_forward(xd, deep, true).shape() == xd.shape());
}

TEST_CASE("deep mode requires channels divisible by 8") {
    Rng rng(72);
    CHECK_THROWS_WITH_AS(SaseParams<double>::init(12, 2, 2, 4, rng), doctest::Contains("divisible by 8"),
                         std::runtime_error);
}

TEST_CASE("zero input with zero biases stays zero") {
    Rng rng(73);
    for (auto [c, s] : {std::pair<std::int64_t, std::int64_t>{8, 6}, {16, 2}}) {
        auto p = SaseParams<double>::init(c, s, s, 4, rng);
        auto x = Tensor<double>::zeros({2, c, s, s});
        auto y = ops::sase_forward(x, p, true);
        for (auto v : y.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("the SE gate reacts to input scaling and forcing it to one removes the gating") {
    Rng rng(74);
    auto p = SaseParams<double>::init(8, 4, 4, 4, rng);
    auto x = Tensor<double>::randn({1, 8, 4, 4}, rng);

    auto h = p.expand.apply(x, true, true);
    h = p.dw.apply(h, true, true);
    auto g1 = ops::se_gate(h, p.se);
    auto g2 = ops::se_gate(ops::scale(h, 2.0), p.se);
    CHECK(urwkv::testing::max_abs_diff(g1.data(), g2.data()) > 1e-9);

    // gate forced to 1 equals the ungated data path exactly
    auto gated_off = ops::sase_forward(x, p, true, /*gate_forced_one=*/true);
    auto manual = ops::add(x, p.project.apply(p.dw.apply(p.expand.apply(x, true, true), true, true), true, false));
    CHECK(gated_off.data() == manual.data());
}

TEST_CASE("se_gate values stay strictly inside (0,1) and w2=0 pins them at 1/2") {
    Rng rng(75);
    auto p = SeGateParams<double>::init(8, 2, rng);
    auto x = Tensor<double>::randn({2, 8, 3, 3}, rng, 10.0);
    auto gates = ops::se_gate(x, p);
    for (auto v : gates.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    std::fill(p.w2.data().begin(), p.w2.data().end(), 0.0);
    auto pinned = ops::se_gate(x, p);
    for (auto v : pinned.data()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("se_gate on a constant input depends only on the level") {
    Rng rng(76);
    auto p = SeGateParams<double>::init(4, 2, rng);
    auto a = ops::se_gate(Tensor<double>::full({1, 4, 3, 3}, 0.7), p);
    auto b = ops::se_gate(Tensor<double>::full({1, 4, 5, 5}, 0.7), p);  // different extent, same level
    CHECK(urwkv::testing::max_abs_diff(a.data(), b.data()) < 1e-14);
}

TEST_CASE("se_gate hand case with identity-like projections") {
    Rng rng(77);
    auto p = SeGateParams<double>::init(2, 2, rng);
    // w1 = w2 = identity: gate = sigmoid(relu(gap))
    p.w1 = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    p.w2 = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    auto x = Tensor<double>::from_data({1, 2, 1, 2}, {1.0, 3.0, -2.0, -4.0});  // gaps: 2, -3
    auto g = ops::se_gate(x, p);
    CHECK(g.data()[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
    CHECK(g.data()[1] == doctest::Approx(0.5));  // relu(-3) = 0

    // single-map [C,1,1] overload
    auto g3 = ops::se_gate(ops::select_batch(x, 0), p, 0);
    CHECK(g3.shape() == Shape{2, 1, 1});
    CHECK(g3.data() == g.data());
}

TEST_CASE("residual identity when the projection weights are zero") {
    Rng rng(78);
    for (auto [c, s] : {std::pair<std::int64_t, std::int64_t>{8, 6}, {16, 2}}) {
        auto p = SaseParams<double>::init(c, s, s, 4, rng);
        std::fill(p.project.w.data().begin(), p.project.w.data().end(), 0.0);
        auto x = Tensor<double>::randn({2, c, s, s}, rng);
        auto y = ops::sase_forward(x, p, true);
        CHECK(y.data() == x.data());
    }
}

TEST_CASE("both SASE modes pass a 64-bit gradient check") {
    Rng rng(79);
    auto shallow = SaseParams<double>::init(8, 3, 3, 4, rng);
    auto xs = Tensor<double>::randn({1, 8, 3, 3}, rng, 1.0, true);
    CHECK(grad_check([&] { return ops::sum(ops::square(ops::sase_forward(xs, shallow, true))); }, xs, 1e-5) <= 1e-4);
    auto deep = SaseParams<double>::init(8, 2, 2, 4, rng);
    CHECK(deep.mode == SaseMode::Deep);
    auto xd = Tensor<double>::randn({1, 8, 2, 2}, rng, 1.0, true);
    CHECK(grad_check([&] { return ops::sum(ops::square(ops::sase_forward(xd, deep, true))); }, xd, 1e-5) <= 1e-4);
}
