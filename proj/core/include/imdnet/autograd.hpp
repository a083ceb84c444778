#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "imdnet/tensor.hpp"

namespace imdnet {

/// Reverse-mode autodiff over Tensor<T>. Graphs are built define-by-run:
/// every op returns a fresh node holding its value, the parent handles and
/// a closure that scatters the node's gradient into the parents.
template <typename T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated on demand during backward
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backfn;
    uint64_t order = 0;  // creation index, a valid topological order

    Tensor<T>& g() {
        if (grad.empty()) {
            grad = Tensor<T>(val.shape);
        }
        return grad;
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline uint64_t& node_counter() {
    thread_local uint64_t c = 0;
    return c;
}
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Scoped inference mode: ops built inside record no parents/backward.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
};

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(value);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    n->order = detail::node_counter()++;
    return n;
}

/// Interior node; requires_grad is inherited from the parents and gated by
/// the global grad mode. When grads are off, parents and backfn stay empty
/// so the graph is not retained.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backfn) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(value);
    n->order = detail::node_counter()++;
    bool need = false;
    if (grad_enabled()) {
        for (auto& p : parents)
            if (p && p->requires_grad) need = true;
    }
    if (need) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backfn = std::move(backfn);
    }
    return n;
}

/// Backpropagate d(root)/d(everything reachable). The root must be scalar
/// unless seed is supplied. Interior grads are fresh per call; leaf (param)
/// grads accumulate until the caller clears them.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
    if (!root || !root->requires_grad) return;
    // collect reachable grad-requiring nodes
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](Node<T>* a, Node<T>* b) { return a->order > b->order; });
    // reset interior grads; leaves accumulate across calls
    for (Node<T>* n : order)
        if (!n->is_leaf) n->grad = Tensor<T>();
    if (seed) {
        check_same_shape(root->val, *seed, "backward seed");
        root->g() = *seed;
    } else {
        check(root->val.numel() == 1, "backward: root must be scalar");
        root->g().fill(T(1));
    }
    for (Node<T>* n : order) {
        if (n->backfn && !n->grad.empty()) n->backfn(*n);
    }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    for (size_t i = 0; i < dst.numel(); ++i) dst.v[i] += src.v[i];
}

}  // namespace imdnet
