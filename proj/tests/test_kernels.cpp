#include <doctest.h>

#include "urwkv/kernels.hpp"
#include "urwkv/random.hpp"
#include "urwkv/threading.hpp"

using namespace urwkv;

namespace {

std::vector<float> randvec(Rng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

}  // namespace

// The OpenMP kernels must be bitwise equal to their serial references for any
// worker count: every iteration owns its output slots and keeps the same
// per-element accumulation order.
TEST_CASE("conv2d kernels: serial and parallel variants agree bitwise") {
    Rng rng(55);
    const kernels::Conv2dDims cases[] = {
        {2, 3, 9, 7, 4, 3, 3, 1, 1, 1, 1, 9, 7},
        {1, 4, 8, 8, 8, 3, 3, 2, 1, 1, 1, 4, 4},
        {2, 8, 6, 6, 8, 3, 3, 1, 2, 2, 8, 6, 6},   // dilated depthwise
        {1, 8, 5, 5, 16, 1, 1, 1, 0, 1, 8, 5, 5},  // grouped pointwise
    };
    for (const auto& d : cases) {
        auto x = randvec(rng, static_cast<std::size_t>(d.n * d.cin * d.h * d.w));
        auto w = randvec(rng, static_cast<std::size_t>(d.cout * (d.cin / d.groups) * d.kh * d.kw));
        auto b = randvec(rng, static_cast<std::size_t>(d.cout));
        const auto out_n = static_cast<std::size_t>(d.n * d.cout * d.hout * d.wout);
        std::vector<float> y1(out_n), y2(out_n);
        kernels::conv2d_forward_serial(x.data(), w.data(), b.data(), y1.data(), d);
        for (int threads : {1, 2, 4}) {
            set_max_threads(threads);
            kernels::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), d);
            CHECK(y1 == y2);
        }
        auto gy = randvec(rng, out_n);
        std::vector<float> gx1(x.size(), 0.f), gx2(x.size(), 0.f);
        kernels::conv2d_backward_data_serial(gy.data(), w.data(), gx1.data(), d);
        kernels::conv2d_backward_data(gy.data(), w.data(), gx2.data(), d);
        CHECK(gx1 == gx2);
        std::vector<float> gw1(w.size(), 0.f), gw2(w.size(), 0.f), gb1(b.size(), 0.f), gb2(b.size(), 0.f);
        kernels::conv2d_backward_weights_serial(x.data(), gy.data(), gw1.data(), gb1.data(), d);
        kernels::conv2d_backward_weights(x.data(), gy.data(), gw2.data(), gb2.data(), d);
        CHECK(gw1 == gw2);
        CHECK(gb1 == gb2);
        set_max_threads(0);
    }
}

TEST_CASE("matmul kernels agree bitwise") {
    Rng rng(56);
    auto a = randvec(rng, 37 * 19);
    auto b = randvec(rng, 19 * 23);
    std::vector<float> c1(37 * 23), c2(37 * 23);
    kernels::matmul_serial(a.data(), b.data(), c1.data(), 37, 19, 23);
    for (int threads : {1, 2, 4}) {
        set_max_threads(threads);
        kernels::matmul(a.data(), b.data(), c2.data(), 37, 19, 23);
        CHECK(c1 == c2);
    }
    set_max_threads(0);
}

TEST_CASE("bi_wkv kernels agree bitwise") {
    Rng rng(57);
    const std::int64_t t_len = 33, c_len = 6;
    auto k = randvec(rng, static_cast<std::size_t>(t_len * c_len));
    auto v = randvec(rng, static_cast<std::size_t>(t_len * c_len));
    auto w = randvec(rng, static_cast<std::size_t>(c_len));
    auto u = randvec(rng, static_cast<std::size_t>(c_len));
    std::vector<float> y1(k.size()), y2(k.size());
    kernels::bi_wkv_forward_serial(k.data(), v.data(), w.data(), u.data(), y1.data(), t_len, c_len);
    auto gy = randvec(rng, k.size());
    std::vector<float> gk1(k.size(), 0.f), gv1(k.size(), 0.f), gw1(c_len, 0.f), gu1(c_len, 0.f);
    kernels::bi_wkv_backward_serial(k.data(), v.data(), w.data(), u.data(), gy.data(), gk1.data(), gv1.data(),
                                    gw1.data(), gu1.data(), t_len, c_len);
    for (int threads : {1, 2, 4}) {
        set_max_threads(threads);
        kernels::bi_wkv_forward(k.data(), v.data(), w.data(), u.data(), y2.data(), t_len, c_len);
        CHECK(y1 == y2);
        std::vector<float> gk2(k.size(), 0.f), gv2(k.size(), 0.f), gw2(c_len, 0.f), gu2(c_len, 0.f);
        kernels::bi_wkv_backward(k.data(), v.data(), w.data(), u.data(), gy.data(), gk2.data(), gv2.data(),
                                 gw2.data(), gu2.data(), t_len, c_len);
        CHECK(gk1 == gk2);
        CHECK(gv1 == gv2);
        CHECK(gw1 == gw2);
        CHECK(gu1 == gu2);
    }
    set_max_threads(0);
}

TEST_CASE("conv output extent formula") {
    CHECK(kernels::conv_out_extent(7, 3, 1, 1, 1) == 7);
    CHECK(kernels::conv_out_extent(8, 3, 2, 1, 1) == 4);
    CHECK(kernels::conv_out_extent(6, 3, 1, 2, 2) == 6);
}
