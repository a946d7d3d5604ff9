#pragma once

#include <cmath>

#include "urwkv/data.hpp"
#include "urwkv/model.hpp"

namespace urwkv {

struct TrainConfig {
    std::int64_t epochs = 20;
    std::int64_t batch_size = 4;
    double lr = 1e-3;
    double split = 0.7;
    std::uint64_t seed = 1;
    double bce_weight = 1.0;
    double dice_weight = 1.0;

    void validate() const {
        check(epochs >= 0 && batch_size >= 1, "train: epochs must be >= 0 and batch size >= 1");
        check(split > 0.0 && split < 1.0, "train: split fraction must lie in (0,1)");
        check(lr > 0.0, "train: learning rate must be positive");
    }
};

struct EpochStats {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double val_dice = 0.0;
    double val_iou = 0.0;
};

struct SplitIndices {
    std::vector<std::int64_t> train, val;
    std::uint64_t hash = 0;  // FNV-1a over the sorted val indices
};

inline SplitIndices make_split(std::int64_t n, double fraction, std::uint64_t seed) {
    check(n >= 2, "make_split: need at least two samples");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(seed ^ 0x5e17aa11u);
    rng.shuffle(idx);
    auto n_train = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n)));
    n_train = std::min<std::int64_t>(std::max<std::int64_t>(n_train, 1), n - 1);
    SplitIndices s;
    s.train.assign(idx.begin(), idx.begin() + n_train);
    s.val.assign(idx.begin() + n_train, idx.end());
    auto sorted = s.val;
    std::sort(sorted.begin(), sorted.end());
    std::uint64_t h = 1469598103934665603ull;
    for (auto v : sorted) {
        h ^= static_cast<std::uint64_t>(v);
        h *= 1099511628211ull;
    }
    s.hash = h;
    return s;
}

class TrainAbort : public std::runtime_error {
public:
    TrainAbort(std::int64_t epoch, std::int64_t batch, const std::string& detail)
        : std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + ": " + detail),
          epoch(epoch),
          batch(batch) {}
    std::int64_t epoch, batch;
};

template <class Real>
struct TrainResult {
    std::vector<EpochStats> history;
    std::vector<std::vector<Real>> best_state;  // values of model.state at the best epoch
    std::int64_t best_epoch = -1;
    double best_dice = -1.0;
    SplitIndices split;
};

namespace detail {

template <class Real>
std::vector<Tensor<Real>> unique_params(Model<Real>& m) {
    std::unordered_set<const TensorNode<Real>*> seen;
    std::vector<Tensor<Real>> out;
    for (auto& [name, t] : m.params)
        if (seen.insert(t.node().get()).second) out.push_back(t);
    return out;
}

template <class Real>
struct Adam {
    std::vector<std::vector<Real>> m, v;
    std::int64_t t = 0;
    Real beta1 = Real(0.9), beta2 = Real(0.999), eps = Real(1e-8);

    void step(std::vector<Tensor<Real>>& params, Real lr) {
        if (m.empty()) {
            for (const auto& p : params) {
                m.emplace_back(p.data().size(), Real(0));
                v.emplace_back(p.data().size(), Real(0));
            }
        }
        ++t;
        const Real c1 = Real(1) - std::pow(beta1, static_cast<Real>(t));
        const Real c2 = Real(1) - std::pow(beta2, static_cast<Real>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i].data();
            const bool has = params[i].has_grad();
            for (std::size_t j = 0; j < p.size(); ++j) {
                const Real g = has ? params[i].grad()[j] : Real(0);
                m[i][j] = beta1 * m[i][j] + (Real(1) - beta1) * g;
                v[i][j] = beta2 * v[i][j] + (Real(1) - beta2) * g * g;
                p[j] -= lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
            }
        }
    }
};

template <class Real>
Tensor<Real> batch_images(const std::vector<SegSample<Real>>& data, const std::vector<std::int64_t>& idx,
                          std::size_t from, std::size_t to) {
    const auto& first = data[static_cast<std::size_t>(idx[from])];
    const auto n = static_cast<std::int64_t>(to - from);
    std::vector<Real> buf;
    buf.reserve(static_cast<std::size_t>(n * first.channels * first.h * first.w));
    for (std::size_t i = from; i < to; ++i) {
        const auto& s = data[static_cast<std::size_t>(idx[i])];
        check(s.channels == first.channels && s.h == first.h && s.w == first.w,
              "train: dataset samples disagree on shape");
        buf.insert(buf.end(), s.image.begin(), s.image.end());
    }
    return Tensor<Real>::from_data({n, first.channels, first.h, first.w}, std::move(buf));
}

template <class Real>
Tensor<Real> batch_masks(const std::vector<SegSample<Real>>& data, const std::vector<std::int64_t>& idx,
                         std::size_t from, std::size_t to) {
    const auto& first = data[static_cast<std::size_t>(idx[from])];
    const auto n = static_cast<std::int64_t>(to - from);
    std::vector<Real> buf;
    buf.reserve(static_cast<std::size_t>(n * first.h * first.w));
    for (std::size_t i = from; i < to; ++i) {
        const auto& s = data[static_cast<std::size_t>(idx[i])];
        for (auto m : s.mask.data) buf.push_back(static_cast<Real>(m));
    }
    return Tensor<Real>::from_data({n, std::int64_t(1), first.h, first.w}, std::move(buf));
}

template <class Real>
std::string param_norms(Model<Real>& m) {
    double total = 0.0, biggest = 0.0;
    for (auto& [name, t] : m.params)
        for (auto v : t.data()) {
            total += static_cast<double>(v) * static_cast<double>(v);
            biggest = std::max(biggest, std::abs(static_cast<double>(v)));
        }
    return "parameter l2 norm " + std::to_string(std::sqrt(total)) + ", max |value| " + std::to_string(biggest);
}

}  // namespace detail

struct EvalMetrics {
    double dice = 0.0;
    double iou = 0.0;
    double hd95 = std::numeric_limits<double>::quiet_NaN();
    std::int64_t n = 0;
    std::int64_t hd95_defined = 0;
};

// Mean metrics over a sample subset (all samples when subset is null).
// hd95 averages pairs where both masks are nonempty.
template <class Real>
EvalMetrics evaluate(Model<Real>& m, const std::vector<SegSample<Real>>& data,
                     const std::vector<std::int64_t>* subset = nullptr, bool with_hd95 = false) {
    std::vector<std::int64_t> all;
    if (!subset) {
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i) all.push_back(i);
        subset = &all;
    }
    check(!subset->empty(), "evaluate: empty sample set");
    EvalMetrics out;
    double dice_acc = 0.0, iou_acc = 0.0, hd_acc = 0.0;
    const std::size_t batch = 8;
    for (std::size_t from = 0; from < subset->size(); from += batch) {
        const std::size_t to = std::min(subset->size(), from + batch);
        auto images = detail::batch_images(data, *subset, from, to);
        auto logits = forward(m, images, /*training=*/false);
        const std::int64_t plane = logits.dim(2) * logits.dim(3);
        for (std::size_t i = from; i < to; ++i) {
            const auto& s = data[static_cast<std::size_t>((*subset)[i])];
            BinaryMask pred;
            pred.h = logits.dim(2);
            pred.w = logits.dim(3);
            pred.data.resize(static_cast<std::size_t>(plane));
            const Real* p = logits.data().data() + static_cast<std::int64_t>(i - from) * logits.dim(1) * plane;
            for (std::int64_t j = 0; j < plane; ++j) pred.data[static_cast<std::size_t>(j)] = p[j] >= Real(0) ? 1 : 0;
            dice_acc += dice(pred, s.mask);
            iou_acc += iou(pred, s.mask);
            if (with_hd95) {
                const bool pred_empty =
                    std::none_of(pred.data.begin(), pred.data.end(), [](std::uint8_t v) { return v != 0; });
                const bool gt_empty =
                    std::none_of(s.mask.data.begin(), s.mask.data.end(), [](std::uint8_t v) { return v != 0; });
                if (!pred_empty && !gt_empty) {
                    hd_acc += hd95(pred, s.mask);
                    ++out.hd95_defined;
                }
            }
            ++out.n;
        }
    }
    out.dice = dice_acc / static_cast<double>(out.n);
    out.iou = iou_acc / static_cast<double>(out.n);
    if (out.hd95_defined > 0) out.hd95 = hd_acc / static_cast<double>(out.hd95_defined);
    return out;
}

// BCE-with-logits plus (1 - soft Dice), Adam with a cosine-decayed learning
// rate, deterministic given (seed, config, data). Keeps the best-val-Dice
// state snapshot. Throws TrainAbort on a non-finite loss.
template <class Real>
TrainResult<Real> train(Model<Real>& m, const std::vector<SegSample<Real>>& data, const TrainConfig& cfg) {
    cfg.validate();
    check(!data.empty(), "train: dataset is empty");
    TrainResult<Real> result;
    result.split = make_split(static_cast<std::int64_t>(data.size()), cfg.split, cfg.seed);
    if (cfg.epochs == 0) return result;

    auto params = detail::unique_params(m);
    detail::Adam<Real> opt;
    Rng shuffler(cfg.seed ^ 0xba7c4e5u);

    auto order = result.split.train;
    const double pi = 3.14159265358979323846;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const Real lr = static_cast<Real>(cfg.lr * 0.5 * (1.0 + std::cos(pi * static_cast<double>(epoch) /
                                                                         static_cast<double>(cfg.epochs))));
        shuffler.shuffle(order);
        double loss_acc = 0.0;
        std::int64_t batches = 0;
        for (std::size_t from = 0; from < order.size(); from += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t to = std::min(order.size(), from + static_cast<std::size_t>(cfg.batch_size));
            auto images = detail::batch_images(data, order, from, to);
            auto targets = detail::batch_masks(data, order, from, to);
            auto logits = forward(m, images, /*training=*/true);
            auto loss = ops::add(ops::scale(ops::bce_with_logits(logits, targets), static_cast<Real>(cfg.bce_weight)),
                                 ops::scale(ops::soft_dice_loss(logits, targets, Real(1)),
                                            static_cast<Real>(cfg.dice_weight)));
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv)) {
                throw TrainAbort(epoch, batches, "non-finite loss; " + detail::param_norms(m));
            }
            loss.backward();
            opt.step(params, lr);
            for (auto& p : params) p.zero_grad();
            loss_acc += lv;
            ++batches;
        }

        auto metrics = evaluate(m, data, &result.split.val);
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_acc / static_cast<double>(batches);
        st.val_dice = metrics.dice;
        st.val_iou = metrics.iou;
        result.history.push_back(st);
        if (metrics.dice > result.best_dice) {
            result.best_dice = metrics.dice;
            result.best_epoch = epoch;
            result.best_state.clear();
            for (auto& [name, t] : m.state) result.best_state.push_back(t.data());
        }
    }
    return result;
}

template <class Real>
void apply_state(Model<Real>& m, const std::vector<std::vector<Real>>& snapshot) {
    check(snapshot.size() == m.state.size(), "apply_state: snapshot does not match model");
    for (std::size_t i = 0; i < snapshot.size(); ++i) {
        check(snapshot[i].size() == m.state[i].second.data().size(), "apply_state: entry size mismatch");
        m.state[i].second.data() = snapshot[i];
    }
}

}  // namespace urwkv
