#pragma once

#include <unordered_set>

#include "urwkv/darm.hpp"
#include "urwkv/sase.hpp"

namespace urwkv {

struct Ablation {
    std::vector<ScanDirection> direction_subset{all_scan_directions.begin(), all_scan_directions.end()};
    bool dual_rwkv = true;  // false: directional branches share one tied parameter set
    bool darm = true;       // false: bottleneck is the identity
    bool sase = true;       // false: encoder stages are bare strided convs
};

struct ModelConfig {
    std::vector<std::int64_t> stage_widths;  // empty: taken from variant
    std::int64_t input_channels = 1;
    std::int64_t num_classes = 1;
    std::int64_t input_size = 64;  // stage shapes (and SASE modes) are fixed at build time
    std::string variant = "small";
    Ablation ablation;
    std::uint64_t seed = 1;
    std::int64_t se_ratio = 4;
    std::int64_t channel_mix_expansion = 4;
    bool darm_on_skips = false;

    std::vector<std::int64_t> widths() const {
        if (!stage_widths.empty()) return stage_widths;
        if (variant == "full") return {16, 32, 64, 128, 256};
        if (variant == "small") return {8, 16, 24, 32, 48};
        fail("unknown variant '" + variant + "' (expected 'full' or 'small')");
    }

    void validate() const {
        check(variant == "full" || variant == "small", "variant must be 'full' or 'small', got '" + variant + "'");
        const auto w = widths();
        check(!w.empty(), "stage_widths must be nonempty");
        for (std::size_t i = 0; i < w.size(); ++i) {
            check(w[i] >= 8, "stage " + std::to_string(i + 1) + " width " + std::to_string(w[i]) + " must be >= 8");
            check(w[i] % 8 == 0, "stage " + std::to_string(i + 1) + " width " + std::to_string(w[i]) +
                                     " must be divisible by 8");
            if (i) check(w[i] > w[i - 1], "stage widths must be strictly increasing, stage " + std::to_string(i + 1) +
                                              " violates this");
        }
        check(input_channels >= 1 && num_classes >= 1, "input_channels and num_classes must be positive");
        const std::int64_t stages = static_cast<std::int64_t>(w.size());
        std::int64_t div = 1;
        for (std::int64_t i = 0; i < stages; ++i) div *= 2;
        check(input_size % div == 0, "input_size " + std::to_string(input_size) + " must be divisible by 2^stages = " +
                                         std::to_string(div));
        check(se_ratio >= 1 && channel_mix_expansion >= 1, "se_ratio and channel_mix_expansion must be >= 1");
        if (ablation.darm)
            check(!ablation.direction_subset.empty(), "direction_subset must be nonempty while DARM is enabled");
    }
};

template <class Real>
struct EncoderStage {
    ConvBn<Real> conv;
    std::optional<SaseParams<Real>> sase;
    std::int64_t out_h = 0, out_w = 0;
};

template <class Real>
struct ChannelFusionParams {
    ConvBn<Real> conv1, conv2;
};

template <class Real>
struct DecoderStage {
    ConvBn<Real> up;
    ChannelFusionParams<Real> fuse;
};

template <class Real>
struct Model {
    ModelConfig cfg;
    std::vector<EncoderStage<Real>> encoder;
    std::optional<DarmParams<Real>> darm;
    std::vector<std::optional<DarmParams<Real>>> skip_darms;  // parallel to skips used in fusion
    std::vector<DecoderStage<Real>> decoder;                  // deepest first
    ConvBn<Real> final_up;
    Tensor<Real> head_w, head_b;

    // (name, tensor) in fixed construction order; `state` adds BN buffers.
    std::vector<std::pair<std::string, Tensor<Real>>> params;
    std::vector<std::pair<std::string, Tensor<Real>>> state;
};

namespace detail {

template <class Real>
void register_convbn(Model<Real>& m, const std::string& prefix, ConvBn<Real>& cb) {
    m.params.emplace_back(prefix + ".weight", cb.w);
    m.params.emplace_back(prefix + ".bias", cb.b);
    m.params.emplace_back(prefix + ".bn.gamma", cb.bn_gamma);
    m.params.emplace_back(prefix + ".bn.beta", cb.bn_beta);
    m.state.emplace_back(prefix + ".bn.mean", cb.bn_mean);
    m.state.emplace_back(prefix + ".bn.var", cb.bn_var);
}

template <class Real>
void register_spatial(Model<Real>& m, const std::string& prefix, SpatialMixParams<Real>& p) {
    m.params.emplace_back(prefix + ".ln.gamma", p.ln_gamma);
    m.params.emplace_back(prefix + ".ln.beta", p.ln_beta);
    m.params.emplace_back(prefix + ".w_r", p.w_r);
    m.params.emplace_back(prefix + ".w_k", p.w_k);
    m.params.emplace_back(prefix + ".w_v", p.w_v);
    m.params.emplace_back(prefix + ".w_o", p.w_o);
    m.params.emplace_back(prefix + ".decay", p.decay);
    m.params.emplace_back(prefix + ".bonus", p.bonus);
}

template <class Real>
void register_darm(Model<Real>& m, const std::string& prefix, DarmParams<Real>& p) {
    m.params.emplace_back(prefix + ".pe.weight", p.pe_w);
    m.params.emplace_back(prefix + ".pe.bias", p.pe_b);
    for (std::size_t i = 0; i < p.spatial.size(); ++i) {
        const std::string name = p.tied ? "shared" : to_string(p.directions[i]);
        register_spatial(m, prefix + ".spa." + name, p.spatial[i]);
    }
    m.params.emplace_back(prefix + ".cha.ln.gamma", p.cha.ln_gamma);
    m.params.emplace_back(prefix + ".cha.ln.beta", p.cha.ln_beta);
    m.params.emplace_back(prefix + ".cha.w_k", p.cha.w_k);
    m.params.emplace_back(prefix + ".cha.w_v", p.cha.w_v);
    m.params.emplace_back(prefix + ".cha.w_r", p.cha.w_r);
}

template <class Real>
void register_sase(Model<Real>& m, const std::string& prefix, SaseParams<Real>& p) {
    register_convbn(m, prefix + ".expand", p.expand);
    register_convbn(m, prefix + ".dw", p.dw);
    if (p.pw) register_convbn(m, prefix + ".pw", *p.pw);
    m.params.emplace_back(prefix + ".se.w1", p.se.w1);
    m.params.emplace_back(prefix + ".se.w2", p.se.w2);
    register_convbn(m, prefix + ".project", p.project);
}

}  // namespace detail

template <class Real>
Model<Real> build(const ModelConfig& cfg) {
    cfg.validate();
    Model<Real> m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    const auto widths = cfg.widths();
    const auto stages = static_cast<std::int64_t>(widths.size());

    std::int64_t prev_c = cfg.input_channels;
    std::int64_t size = cfg.input_size;
    for (std::int64_t i = 0; i < stages; ++i) {
        EncoderStage<Real> st;
        st.conv = ConvBn<Real>::init(prev_c, widths[static_cast<std::size_t>(i)], 3, 2, 1, 1, 1, false, rng);
        size /= 2;
        st.out_h = st.out_w = size;
        if (cfg.ablation.sase) {
            st.sase = SaseParams<Real>::init(widths[static_cast<std::size_t>(i)], size, size, cfg.se_ratio, rng);
        }
        m.encoder.push_back(std::move(st));
        prev_c = widths[static_cast<std::size_t>(i)];
    }

    if (cfg.ablation.darm) {
        m.darm = DarmParams<Real>::init(widths.back(), cfg.ablation.direction_subset, !cfg.ablation.dual_rwkv,
                                        cfg.channel_mix_expansion, rng);
        if (cfg.darm_on_skips) {
            for (std::int64_t i = 0; i + 1 < stages; ++i) {
                m.skip_darms.emplace_back(DarmParams<Real>::init(widths[static_cast<std::size_t>(i)],
                                                                 cfg.ablation.direction_subset,
                                                                 !cfg.ablation.dual_rwkv,
                                                                 cfg.channel_mix_expansion, rng));
            }
        }
    }

    for (std::int64_t i = stages - 1; i >= 1; --i) {
        const std::int64_t c_in = widths[static_cast<std::size_t>(i)];
        const std::int64_t c_out = widths[static_cast<std::size_t>(i - 1)];
        DecoderStage<Real> st;
        st.up = ConvBn<Real>::init(c_in, c_out, 2, 2, 0, 1, 1, true, rng);
        st.fuse.conv1 = ConvBn<Real>::init(2 * c_out, c_out, 3, 1, 1, 1, 1, false, rng);
        st.fuse.conv2 = ConvBn<Real>::init(c_out, c_out, 3, 1, 1, 1, 1, false, rng);
        m.decoder.push_back(std::move(st));
    }
    m.final_up = ConvBn<Real>::init(widths[0], widths[0], 2, 2, 0, 1, 1, true, rng);
    m.head_w = Tensor<Real>::randn({cfg.num_classes, widths[0], 1, 1}, rng,
                                   std::sqrt(Real(2) / static_cast<Real>(widths[0])), true);
    m.head_b = Tensor<Real>::zeros({cfg.num_classes}, true);

    // Registry in the same fixed order.
    for (std::int64_t i = 0; i < stages; ++i) {
        const std::string prefix = "enc" + std::to_string(i + 1);
        detail::register_convbn(m, prefix + ".conv", m.encoder[static_cast<std::size_t>(i)].conv);
        if (m.encoder[static_cast<std::size_t>(i)].sase)
            detail::register_sase(m, prefix + ".sase", *m.encoder[static_cast<std::size_t>(i)].sase);
    }
    if (m.darm) detail::register_darm(m, "darm", *m.darm);
    for (std::size_t i = 0; i < m.skip_darms.size(); ++i)
        if (m.skip_darms[i]) detail::register_darm(m, "skip_darm" + std::to_string(i + 1), *m.skip_darms[i]);
    for (std::size_t i = 0; i < m.decoder.size(); ++i) {
        const std::string prefix = "dec" + std::to_string(stages - static_cast<std::int64_t>(i));
        detail::register_convbn(m, prefix + ".up", m.decoder[i].up);
        detail::register_convbn(m, prefix + ".fuse1", m.decoder[i].fuse.conv1);
        detail::register_convbn(m, prefix + ".fuse2", m.decoder[i].fuse.conv2);
    }
    detail::register_convbn(m, "final_up", m.final_up);
    m.params.emplace_back("head.weight", m.head_w);
    m.params.emplace_back("head.bias", m.head_b);

    // state = params + BN buffers, with buffers already collected above.
    std::vector<std::pair<std::string, Tensor<Real>>> buffers = std::move(m.state);
    m.state = m.params;
    m.state.insert(m.state.end(), buffers.begin(), buffers.end());
    return m;
}

// Concatenate skip and upsampled features, then two 3x3 conv+BN+ReLU layers
// projecting to the stage width.
template <class Real>
Tensor<Real> channel_fusion(const Tensor<Real>& skip, const Tensor<Real>& upsampled, ChannelFusionParams<Real>& p,
                            bool training) {
    check(skip.rank() == 4 && upsampled.rank() == 4 && skip.dim(2) == upsampled.dim(2) &&
              skip.dim(3) == upsampled.dim(3),
          "channel_fusion: spatial extents differ, " + shape_str(skip.shape()) + " vs " +
              shape_str(upsampled.shape()));
    auto h = ops::concat_channels(skip, upsampled);
    h = p.conv1.apply(h, training, true);
    return p.conv2.apply(h, training, true);
}

namespace detail {

template <class Real>
Tensor<Real> apply_darm_batched(const Tensor<Real>& x, DarmParams<Real>& p) {
    std::vector<Tensor<Real>> outs;
    outs.reserve(static_cast<std::size_t>(x.dim(0)));
    for (std::int64_t n = 0; n < x.dim(0); ++n) {
        outs.push_back(ops::darm_forward(ops::select_batch(x, n), p));
    }
    return ops::stack_batch(outs);
}

}  // namespace detail

template <class Real>
Tensor<Real> forward(Model<Real>& m, const Tensor<Real>& image, bool training) {
    check(image.rank() == 4, "forward: input must be [N,Cin,H,W], got " + shape_str(image.shape()));
    check(image.dim(1) == m.cfg.input_channels, "forward: expected " + std::to_string(m.cfg.input_channels) +
                                                    " input channels, got " + std::to_string(image.dim(1)));
    check(image.dim(2) == m.cfg.input_size && image.dim(3) == m.cfg.input_size,
          "forward: model was built for " + std::to_string(m.cfg.input_size) + "x" + std::to_string(m.cfg.input_size) +
              " inputs, got " + shape_str(image.shape()));

    std::vector<Tensor<Real>> skips;
    Tensor<Real> cur = image;
    for (auto& st : m.encoder) {
        cur = st.conv.apply(cur, training, true);
        if (st.sase) cur = ops::sase_forward(cur, *st.sase, training);
        skips.push_back(cur);
    }

    if (m.darm) cur = detail::apply_darm_batched(cur, *m.darm);

    const auto stages = m.encoder.size();
    for (std::size_t d = 0; d < m.decoder.size(); ++d) {
        auto up = m.decoder[d].up.apply(cur, training, true);
        auto skip = skips[stages - 2 - d];
        if (m.cfg.darm_on_skips && !m.skip_darms.empty()) {
            auto& sd = m.skip_darms[stages - 2 - d];
            if (sd) skip = detail::apply_darm_batched(skip, *sd);
        }
        cur = channel_fusion(skip, up, m.decoder[d].fuse, training);
    }
    cur = m.final_up.apply(cur, training, true);
    return ops::conv2d(cur, m.head_w, m.head_b, 1, 0);
}

// Learnable scalars; tied (aliased) tensors are counted once.
template <class Real>
std::int64_t param_count(const Model<Real>& m) {
    std::unordered_set<const TensorNode<Real>*> seen;
    std::int64_t total = 0;
    for (const auto& [name, t] : m.params) {
        if (seen.insert(t.node().get()).second) total += t.size();
    }
    return total;
}

struct FlopsReport {
    std::int64_t total = 0;
    std::vector<std::pair<std::string, std::int64_t>> per_stage;
};

namespace detail {

inline std::int64_t conv_macs(std::int64_t cout, std::int64_t cin_per_group, std::int64_t k, std::int64_t hout,
                              std::int64_t wout) {
    return cout * cin_per_group * k * k * hout * wout;
}

template <class Real>
std::int64_t darm_macs(const DarmParams<Real>& p, std::int64_t t_len) {
    const std::int64_t c = p.channels();
    std::int64_t macs = t_len * c * c;  // patch embedding
    const auto dirs = static_cast<std::int64_t>(p.directions.size());
    macs += dirs * (4 * t_len * c * c + 8 * t_len * c);  // R/K/V/O projections + wkv scan
    const std::int64_t rc = p.cha.expansion * c;
    macs += t_len * c * rc + t_len * rc * c + t_len * c * c;  // channel mix
    return macs;
}

template <class Real>
std::int64_t sase_macs(const SaseParams<Real>& p, std::int64_t c, std::int64_t hw) {
    std::int64_t macs = 0;
    const std::int64_t mid = p.expand.b.dim(0);
    const std::int64_t se_hidden = p.se.w1.dim(1);
    if (p.mode == SaseMode::Shallow) {
        macs += mid * c * hw;        // expand 1x1
        macs += mid * 9 * hw;        // depthwise 3x3
        macs += mid * se_hidden * 2; // SE pair of linears (T = 1)
        macs += c * mid * hw;        // project
    } else {
        macs += mid * (c / 8) * hw;  // grouped expand
        macs += mid * 9 * hw;        // depthwise 3x3
        macs += mid * mid * hw;      // pointwise
        macs += mid * se_hidden * 2; // SE
        macs += c * mid * hw;        // project
    }
    return macs;
}

}  // namespace detail

// Analytic multiply-accumulate count for one sample of the given shape.
// Convolutions count Cout*Cin/groups*kh*kw*H'*W', transposed convolutions
// Cin*Cout*kh*kw*Hin*Win, linear maps T*Cin*Cout, the WKV scan 8 MACs per
// token-channel. The per-stage rows sum exactly to the total.
template <class Real>
FlopsReport flops_estimate(const Model<Real>& m, const Shape& input_shape) {
    check(input_shape.size() == 3, "flops_estimate: input shape must be [Cin,H,W]");
    FlopsReport rep;
    const auto widths = m.cfg.widths();
    const auto stages = static_cast<std::int64_t>(widths.size());
    std::int64_t c_prev = input_shape[0];
    std::int64_t h = input_shape[1], w = input_shape[2];
    for (std::int64_t i = 0; i < stages; ++i) {
        const std::int64_t c = widths[static_cast<std::size_t>(i)];
        h /= 2;
        w /= 2;
        std::int64_t macs = detail::conv_macs(c, c_prev, 3, h, w);
        if (m.encoder[static_cast<std::size_t>(i)].sase)
            macs += detail::sase_macs(*m.encoder[static_cast<std::size_t>(i)].sase, c, h * w);
        rep.per_stage.emplace_back("enc" + std::to_string(i + 1), macs);
        c_prev = c;
    }
    if (m.darm) rep.per_stage.emplace_back("darm", detail::darm_macs(*m.darm, h * w));
    for (std::size_t d = 0; d < m.decoder.size(); ++d) {
        const std::int64_t i = stages - 1 - static_cast<std::int64_t>(d);
        const std::int64_t c_in = widths[static_cast<std::size_t>(i)];
        const std::int64_t c_out = widths[static_cast<std::size_t>(i - 1)];
        std::int64_t macs = c_in * c_out * 4 * h * w;  // transposed 2x2 from the current grid
        h *= 2;
        w *= 2;
        macs += detail::conv_macs(c_out, 2 * c_out, 3, h, w);
        macs += detail::conv_macs(c_out, c_out, 3, h, w);
        if (m.cfg.darm_on_skips && !m.skip_darms.empty() && m.skip_darms[static_cast<std::size_t>(i - 1)])
            macs += detail::darm_macs(*m.skip_darms[static_cast<std::size_t>(i - 1)], h * w);
        rep.per_stage.emplace_back("dec" + std::to_string(i + 1), macs);
    }
    {
        std::int64_t macs = widths[0] * widths[0] * 4 * h * w;
        h *= 2;
        w *= 2;
        macs += m.cfg.num_classes * widths[0] * h * w;  // 1x1 head
        rep.per_stage.emplace_back("head", macs);
    }
    for (const auto& [name, macs] : rep.per_stage) rep.total += macs;
    return rep;
}

}  // namespace urwkv
