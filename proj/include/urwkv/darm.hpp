#pragma once

#include "urwkv/mix.hpp"
#include "urwkv/quadscan.hpp"

namespace urwkv {

// Direction-adaptive mixing block: a 1x1 patch embedding, one spatial-mixing
// unit per enabled scan direction (independent weights unless tied), and one
// channel-mixing unit over the flattened map.
template <class Real>
struct DarmParams {
    Tensor<Real> pe_w;  // [C,C] 1x1 patch embedding (patch size fixed to 1)
    Tensor<Real> pe_b;  // [C]
    std::vector<ScanDirection> directions;
    bool tied = false;  // true: all directions share spatial[0]
    std::vector<SpatialMixParams<Real>> spatial;
    ChannelMixParams<Real> cha;

    static DarmParams init(std::int64_t c, std::vector<ScanDirection> dirs, bool tied, std::int64_t cha_expansion,
                           Rng& rng) {
        check(!dirs.empty(), "darm: direction set must be nonempty");
        DarmParams p;
        p.pe_w = Tensor<Real>::randn({c, c}, rng, Real(1) / std::sqrt(static_cast<Real>(c)), true);
        p.pe_b = Tensor<Real>::zeros({c}, true);
        p.directions = std::move(dirs);
        p.tied = tied;
        const std::size_t sets = tied ? 1 : p.directions.size();
        for (std::size_t i = 0; i < sets; ++i) p.spatial.push_back(SpatialMixParams<Real>::init(c, rng));
        p.cha = ChannelMixParams<Real>::init(c, cha_expansion, rng);
        return p;
    }

    const SpatialMixParams<Real>& spatial_for(std::size_t i) const { return spatial[tied ? 0 : i]; }
    std::int64_t channels() const { return pe_b.dim(0); }
};

namespace ops {

// Scan along each enabled direction, spatial-mix each sequence, fold back and
// average pixel-wise. Branch order and the summation order are fixed so the
// merge is bitwise reproducible.
template <class Real>
Tensor<Real> quadscan_mix(const Tensor<Real>& e, const DarmParams<Real>& p) {
    check(e.rank() == 3 && e.dim(0) == p.channels(),
          "quadscan_mix: input " + shape_str(e.shape()) + " does not match parameter width " +
              std::to_string(p.channels()));
    const std::int64_t h = e.dim(1), w = e.dim(2);
    Tensor<Real> acc;
    for (std::size_t i = 0; i < p.directions.size(); ++i) {
        auto s = scan(e, p.directions[i]);
        auto mixed = spatial_mix(s, p.spatial_for(i));
        auto back = unscan(mixed, p.directions[i], h, w);
        acc = acc.defined() ? add(acc, back) : back;
    }
    return scale(acc, Real(1) / static_cast<Real>(p.directions.size()));
}

// Patch embedding, residual quadscan mixing, residual channel mixing.
template <class Real>
Tensor<Real> darm_forward(const Tensor<Real>& e, const DarmParams<Real>& p) {
    check(e.rank() == 3 && e.dim(0) == p.channels(),
          "darm_forward: input " + shape_str(e.shape()) + " does not match parameter width " +
              std::to_string(p.channels()));
    const std::int64_t h = e.dim(1), w = e.dim(2);
    auto s = add_rowvec(matmul(flatten_map(e), p.pe_w), p.pe_b);
    auto x = unscan(s, ScanDirection::LR, h, w);
    x = add(x, quadscan_mix(x, p));
    auto seq = flatten_map(x);
    seq = add(seq, channel_mix(seq, p.cha));
    return unscan(seq, ScanDirection::LR, h, w);
}

}  // namespace ops
}  // namespace urwkv
