// Times the OpenMP kernels against their serial references and verifies that
// the two produce identical bits. Run with URWKV_THREADS=<n> to pin workers.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>

#include "urwkv/kernels.hpp"
#include "urwkv/random.hpp"

using namespace urwkv;

namespace {

template <class F>
double best_of(int reps, F&& f) {
    double best = 1e100;
    for (int i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

std::vector<float> randvec(Rng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

void report(const char* name, double serial, double parallel, bool identical) {
    std::printf("%-26s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   bitwise %s\n", name, serial * 1e3,
                parallel * 1e3, serial / parallel, identical ? "equal" : "DIFFER");
}

}  // namespace

int main() {
    Rng rng(42);
    std::printf("threads: %d\n", max_threads());

    {
        kernels::Conv2dDims d{8, 32, 64, 64, 32, 3, 3, 1, 1, 1, 1, 64, 64};
        auto x = randvec(rng, static_cast<std::size_t>(d.n * d.cin * d.h * d.w));
        auto w = randvec(rng, static_cast<std::size_t>(d.cout * d.cin * d.kh * d.kw));
        auto b = randvec(rng, static_cast<std::size_t>(d.cout));
        std::vector<float> y1(static_cast<std::size_t>(d.n * d.cout * d.hout * d.wout));
        std::vector<float> y2(y1.size());
        const double ts = best_of(3, [&] { kernels::conv2d_forward_serial(x.data(), w.data(), b.data(), y1.data(), d); });
        const double tp = best_of(3, [&] { kernels::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), d); });
        report("conv2d forward", ts, tp, std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);

        std::vector<float> gy = randvec(rng, y1.size());
        std::vector<float> gx1(x.size(), 0.f), gx2(x.size(), 0.f);
        const double bs = best_of(3, [&] { kernels::conv2d_backward_data_serial(gy.data(), w.data(), gx1.data(), d); });
        const double bp = best_of(3, [&] { kernels::conv2d_backward_data(gy.data(), w.data(), gx2.data(), d); });
        report("conv2d backward data", bs, bp, gx1 == gx2);

        std::vector<float> gw1(w.size(), 0.f), gw2(w.size(), 0.f), gb1(b.size(), 0.f), gb2(b.size(), 0.f);
        const double ws =
            best_of(3, [&] { kernels::conv2d_backward_weights_serial(x.data(), gy.data(), gw1.data(), gb1.data(), d); });
        const double wp =
            best_of(3, [&] { kernels::conv2d_backward_weights(x.data(), gy.data(), gw2.data(), gb2.data(), d); });
        report("conv2d backward weights", ws, wp, gw1 == gw2 && gb1 == gb2);
    }

    {
        const std::int64_t m = 4096, k = 256, n = 256;
        auto a = randvec(rng, static_cast<std::size_t>(m * k));
        auto b = randvec(rng, static_cast<std::size_t>(k * n));
        std::vector<float> c1(static_cast<std::size_t>(m * n)), c2(c1.size());
        const double ts = best_of(3, [&] { kernels::matmul_serial(a.data(), b.data(), c1.data(), m, k, n); });
        const double tp = best_of(3, [&] { kernels::matmul(a.data(), b.data(), c2.data(), m, k, n); });
        report("matmul", ts, tp, c1 == c2);
    }

    {
        const std::int64_t t_len = 4096, c_len = 64;
        auto k = randvec(rng, static_cast<std::size_t>(t_len * c_len));
        auto v = randvec(rng, static_cast<std::size_t>(t_len * c_len));
        auto w = randvec(rng, static_cast<std::size_t>(c_len));
        auto u = randvec(rng, static_cast<std::size_t>(c_len));
        std::vector<float> y1(k.size()), y2(k.size());
        const double ts =
            best_of(3, [&] { kernels::bi_wkv_forward_serial(k.data(), v.data(), w.data(), u.data(), y1.data(), t_len, c_len); });
        const double tp =
            best_of(3, [&] { kernels::bi_wkv_forward(k.data(), v.data(), w.data(), u.data(), y2.data(), t_len, c_len); });
        report("bi_wkv forward", ts, tp, y1 == y2);

        auto gy = randvec(rng, k.size());
        std::vector<float> gk1(k.size(), 0.f), gv1(k.size(), 0.f), gw1(w.size(), 0.f), gu1(u.size(), 0.f);
        std::vector<float> gk2(k.size(), 0.f), gv2(k.size(), 0.f), gw2(w.size(), 0.f), gu2(u.size(), 0.f);
        const double bs = best_of(3, [&] {
            kernels::bi_wkv_backward_serial(k.data(), v.data(), w.data(), u.data(), gy.data(), gk1.data(), gv1.data(),
                                            gw1.data(), gu1.data(), t_len, c_len);
        });
        const double bp = best_of(3, [&] {
            kernels::bi_wkv_backward(k.data(), v.data(), w.data(), u.data(), gy.data(), gk2.data(), gv2.data(),
                                     gw2.data(), gu2.data(), t_len, c_len);
        });
        report("bi_wkv backward", bs, bp, gk1 == gk2 && gv1 == gv2 && gw1 == gw2 && gu1 == gu2);
    }
    return 0;
}
