#include <doctest.h>

#include "urwkv/mix.hpp"
#include "support.hpp"

using namespace urwkv;

namespace {

struct WkvCase {
    Tensor<double> k, v, w, u;
};

WkvCase random_case(Rng& rng, std::int64_t t_len, std::int64_t c_len, bool with_grad = false) {
    WkvCase c{Tensor<double>::randn({t_len, c_len}, rng, 1.0, with_grad),
              Tensor<double>::randn({t_len, c_len}, rng, 1.0, with_grad),
              Tensor<double>::uniform({c_len}, rng, -1, 1, with_grad),
              Tensor<double>::uniform({c_len}, rng, -1, 1, with_grad)};
    return c;
}

}  // namespace

TEST_CASE("bi_wkv with one token returns V exactly") {
    Rng rng(3);
    auto c = random_case(rng, 1, 4);
    auto naive = ops::bi_wkv_naive(c.k, c.v, c.w, c.u);
    auto scan = ops::bi_wkv_scan(c.k, c.v, c.w, c.u);
    CHECK(naive.data() == c.v.data());
    CHECK(scan.data() == c.v.data());
}

TEST_CASE("bi_wkv two-token hand cases") {
    auto k = Tensor<double>::zeros({2, 1});
    auto v = Tensor<double>::from_data({2, 1}, {1.0, 3.0});
    auto w = Tensor<double>::zeros({1});

    // u = 0: symmetric equal-weight average
    auto u0 = Tensor<double>::zeros({1});
    auto y0 = ops::bi_wkv_naive(k, v, w, u0);
    CHECK(y0.data()[0] == doctest::Approx(2.0));
    CHECK(y0.data()[1] == doctest::Approx(2.0));

    // u = ln 2: self token weighted twice
    auto u2 = Tensor<double>::full({1}, std::log(2.0));
    auto y2 = ops::bi_wkv_naive(k, v, w, u2);
    CHECK(y2.data()[0] == doctest::Approx(5.0 / 3.0));
    CHECK(y2.data()[1] == doctest::Approx(7.0 / 3.0));
    auto s2 = ops::bi_wkv_scan(k, v, w, u2);
    CHECK(s2.data()[0] == doctest::Approx(5.0 / 3.0));
    CHECK(s2.data()[1] == doctest::Approx(7.0 / 3.0));
}

TEST_CASE("bi_wkv_scan equals the brute-force oracle on random instances") {
    Rng rng(11);
    double worst = 0;
    for (int it = 0; it < 200; ++it) {
        auto c = random_case(rng, rng.randint(1, 64), rng.randint(1, 8));
        auto a = ops::bi_wkv_naive(c.k, c.v, c.w, c.u);
        auto b = ops::bi_wkv_scan(c.k, c.v, c.w, c.u);
        for (std::int64_t i = 0; i < a.size(); ++i)
            worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) /
                                        std::max(1e-300, std::abs(a.data()[i])));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("bi_wkv_scan backward equals the oracle backward") {
    Rng rng(12);
    double worst = 0;
    for (int it = 0; it < 40; ++it) {
        const auto t_len = rng.randint(1, 24), c_len = rng.randint(1, 4);
        auto a = random_case(rng, t_len, c_len, true);
        WkvCase b{Tensor<double>::from_data({t_len, c_len}, a.k.data(), true),
                  Tensor<double>::from_data({t_len, c_len}, a.v.data(), true),
                  Tensor<double>::from_data({c_len}, a.w.data(), true),
                  Tensor<double>::from_data({c_len}, a.u.data(), true)};
        ops::sum(ops::square(ops::bi_wkv_naive(a.k, a.v, a.w, a.u))).backward();
        ops::sum(ops::square(ops::bi_wkv_scan(b.k, b.v, b.w, b.u))).backward();
        auto cmp = [&](const Tensor<double>& p, const Tensor<double>& q) {
            for (std::int64_t i = 0; i < p.size(); ++i)
                worst = std::max(worst, std::abs(p.grad()[i] - q.grad()[i]) / std::max(1.0, std::abs(p.grad()[i])));
        };
        cmp(a.k, b.k);
        cmp(a.v, b.v);
        cmp(a.w, b.w);
        cmp(a.u, b.u);
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("bi_wkv_scan stays finite for extreme keys and follows the large-K limit") {
    Rng rng(13);
    const std::int64_t t_len = 8, c_len = 2;
    auto v = Tensor<double>::randn({t_len, c_len}, rng);
    auto w = Tensor<double>::uniform({c_len}, rng, -1, 1);
    auto u = Tensor<double>::uniform({c_len}, rng, -1, 1);

    // K entries anywhere in [-100, 100] stay finite
    auto k_ext = Tensor<double>::uniform({t_len, c_len}, rng, -100, 100);
    auto out_ext = ops::bi_wkv_scan(k_ext, v, w, u);
    for (auto y : out_ext.data()) CHECK(std::isfinite(y));

    // as one K[i,c] grows, wkv[t,c] -> V[i,c]; K=40 and K=80 agree
    for (double big : {40.0, 80.0}) {
        auto k = Tensor<double>::zeros({t_len, c_len});
        k.data()[static_cast<std::size_t>(3 * c_len)] = big;  // token 3, channel 0
        auto y = ops::bi_wkv_scan(k, v, w, u);
        for (std::int64_t t = 0; t < t_len; ++t) {
            CHECK(std::isfinite(y.data()[static_cast<std::size_t>(t * c_len)]));
            CHECK(y.data()[static_cast<std::size_t>(t * c_len)] ==
                  doctest::Approx(v.data()[static_cast<std::size_t>(3 * c_len)]).epsilon(1e-8));
        }
    }
}

TEST_CASE("bi_wkv_naive raises on exponent overflow instead of rescaling") {
    auto k = Tensor<double>::full({4, 1}, 800.0);
    auto v = Tensor<double>::ones({4, 1});
    auto w = Tensor<double>::zeros({1});
    auto u = Tensor<double>::zeros({1});
    CHECK_THROWS_WITH_AS(ops::bi_wkv_naive(k, v, w, u), doctest::Contains("overflow"), std::runtime_error);
    auto scan_out = ops::bi_wkv_scan(k, v, w, u);
    for (auto y : scan_out.data()) CHECK(std::isfinite(y));
}

TEST_CASE("bi_wkv commutes with sequence reversal when decay is zero") {
    Rng rng(14);
    const std::int64_t t_len = 9, c_len = 3;
    auto k = Tensor<double>::randn({t_len, c_len}, rng);
    auto v = Tensor<double>::randn({t_len, c_len}, rng);
    auto w = Tensor<double>::zeros({c_len});
    auto u = Tensor<double>::uniform({c_len}, rng, -1, 1);
    auto fwd = ops::bi_wkv_scan(k, v, w, u);
    auto rev = ops::bi_wkv_scan(ops::reverse_tokens(k), ops::reverse_tokens(v), w, u);
    auto back = ops::reverse_tokens(rev);
    CHECK(urwkv::testing::max_abs_diff(fwd.data(), back.data()) < 1e-12);
}

TEST_CASE("bi_wkv is not covariant under general token permutations when decay is nonzero") {
    // distances |t-i| change under an interior swap, so the aggregation must
    // change too; only distance-preserving permutations commute with it
    Rng rng(15);
    const std::int64_t t_len = 8, c_len = 1;
    auto k = Tensor<double>::randn({t_len, c_len}, rng);
    auto v = Tensor<double>::randn({t_len, c_len}, rng);
    auto w = Tensor<double>::full({c_len}, 2.0);
    auto u = Tensor<double>::zeros({c_len});

    std::vector<std::int64_t> perm{0, 5, 2, 3, 4, 1, 6, 7};  // swap tokens 1 and 5
    auto permute = [&](const Tensor<double>& s) {
        std::vector<double> out(s.data().size());
        for (std::int64_t t = 0; t < t_len; ++t)
            out[static_cast<std::size_t>(t)] = s.data()[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])];
        return Tensor<double>::from_data(s.shape(), std::move(out));
    };
    auto direct = permute(ops::bi_wkv_scan(k, v, w, u));
    auto swapped = ops::bi_wkv_scan(permute(k), permute(v), w, u);
    CHECK(urwkv::testing::max_abs_diff(direct.data(), swapped.data()) > 1e-6);
}
