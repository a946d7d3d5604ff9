#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "urwkv/common.hpp"
#include "urwkv/random.hpp"

namespace urwkv {

// One node of the computation graph. Values are immutable once an op has
// consumed them (except leaf parameters between training steps); gradient
// buffers accumulate additively across backward passes.
template <class Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_fn;  // null for leaves

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }

    void accumulate(const Real* g, std::int64_t n) {
        ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
    }
};

template <class Real>
class Tensor {
public:
    using Node = TensorNode<Real>;
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false) {
        check(static_cast<std::int64_t>(data.size()) == numel(shape),
              "tensor data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto count = numel(shape);
        return from_data(std::move(shape), std::vector<Real>(static_cast<std::size_t>(count), Real(0)), requires_grad);
    }

    static Tensor full(Shape shape, Real v, bool requires_grad = false) {
        const auto count = numel(shape);
        return from_data(std::move(shape), std::vector<Real>(static_cast<std::size_t>(count), v), requires_grad);
    }

    static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), Real(1), requires_grad); }

    static Tensor randn(Shape shape, Rng& rng, Real stddev = Real(1), bool requires_grad = false) {
        const auto count = numel(shape);
        std::vector<Real> d(static_cast<std::size_t>(count));
        for (auto& v : d) v = static_cast<Real>(rng.normal()) * stddev;
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor uniform(Shape shape, Rng& rng, Real lo, Real hi, bool requires_grad = false) {
        const auto count = numel(shape);
        std::vector<Real> d(static_cast<std::size_t>(count));
        for (auto& v : d) v = static_cast<Real>(rng.uniform(lo, hi));
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return node_->size(); }

    std::vector<Real>& data() { return node_->value; }
    const std::vector<Real>& data() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    std::vector<Real>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<Real>& grad() const {
        check(has_grad(), "tensor has no gradient (backward not run through it)");
        return node_->grad;
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
    }

    Real item() const {
        check(size() == 1, "item() requires a scalar tensor, got shape " + shape_str(shape()));
        return node_->value[0];
    }

    NodePtr node() const { return node_; }

    void backward() const;

private:
    NodePtr node_;
};

// Replay record: graph nodes in a topological order ending at the root.
// Running adjoints in reverse order propagates gradients to every
// requires_grad leaf reachable from the root.
template <class Real>
class Tape {
public:
    using NodePtr = typename Tensor<Real>::NodePtr;

    static Tape record(const Tensor<Real>& root) {
        Tape tape;
        std::unordered_set<const TensorNode<Real>*> visited;
        // Iterative DFS; graphs can be a few thousand nodes deep in long loops.
        std::vector<std::pair<NodePtr, std::size_t>> stack;
        stack.emplace_back(root.node(), 0);
        visited.insert(root.node().get());
        while (!stack.empty()) {
            auto& [node, next_child] = stack.back();
            if (next_child < node->parents.size()) {
                auto child = node->parents[next_child++];
                if (visited.insert(child.get()).second) {
                    stack.emplace_back(std::move(child), 0);
                }
            } else {
                tape.order_.push_back(node);
                stack.pop_back();
            }
        }
        return tape;
    }

    void replay_adjoints() {
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            if ((*it)->backward_fn && !(*it)->grad.empty()) (*it)->backward_fn();
        }
    }

    std::size_t size() const { return order_.size(); }

private:
    std::vector<NodePtr> order_;
};

template <class Real>
void Tensor<Real>::backward() const {
    check(size() == 1, "backward() requires a scalar loss, got shape " + shape_str(shape()));
    auto tape = Tape<Real>::record(*this);
    node_->ensure_grad();
    node_->grad[0] += Real(1);
    tape.replay_adjoints();
}

namespace detail {

// Attach a backward closure when any input participates in the graph.
template <class Real>
bool any_requires_grad(std::initializer_list<const Tensor<Real>*> inputs) {
    for (const auto* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <class Real, class Fn>
void attach(Tensor<Real>& out, std::initializer_list<const Tensor<Real>*> inputs, Fn&& backward) {
    if (!any_requires_grad<Real>(inputs)) return;
    auto node = out.node();
    node->requires_grad = true;
    for (const auto* t : inputs) {
        if (t->defined()) node->parents.push_back(t->node());
    }
    node->backward_fn = std::forward<Fn>(backward);
}

}  // namespace detail

}  // namespace urwkv
