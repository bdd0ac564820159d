#pragma once

// Reverse-mode tensor engine. A Tensor is a shared handle onto a graph node
// holding values, an optional gradient buffer, parent links, and a backward
// closure. Ops build the graph eagerly; backward() runs the closures in
// reverse topological order. Scalar type is a template parameter: float for
// training speed, double for finite-difference verification.
//
// Every op validates its output for NaN/Inf; numeric breakdown is a hard
// error, never a silent state.

#include "amt/common.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

namespace amt::nn {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

template <class S>
struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad; // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pulls this node's grad into the parents' grads. Captures raw pointers;
    // lifetime is guaranteed by the parents vector.
    std::function<void()> backward;
};

template <class S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.n_ = std::make_shared<Node<S>>();
        t.n_->shape = std::move(shape);
        t.n_->value.assign(shape_numel(t.n_->shape), S(0));
        t.n_->requires_grad = requires_grad;
        if (requires_grad) t.n_->grad.assign(t.n_->value.size(), S(0));
        return t;
    }

    static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
        require(shape_numel(shape) == data.size(), "tensor.bad_shape",
                "data size does not match shape " + shape_str(shape));
        Tensor t = zeros(std::move(shape), requires_grad);
        t.n_->value = std::move(data);
        if (!all_finite(t.n_->value))
            throw NumericError("tensor.nonfinite", "non-finite values in tensor literal");
        return t;
    }

    static Tensor scalar(S v) { return from({1}, {v}); }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    size_t numel() const { return n_->value.size(); }
    bool requires_grad() const { return n_->requires_grad; }

    std::vector<S>& values() { return n_->value; }
    const std::vector<S>& values() const { return n_->value; }
    std::vector<S>& grad() { return n_->grad; }
    const std::vector<S>& grad() const { return n_->grad; }

    S item() const {
        require(numel() == 1, "tensor.not_scalar", "item() on non-scalar tensor");
        return n_->value[0];
    }

    void zero_grad() {
        if (n_ && n_->requires_grad) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
    }

    std::shared_ptr<Node<S>> node() const { return n_; }
    Node<S>* raw() const { return n_.get(); }

private:
    std::shared_ptr<Node<S>> n_;
};

namespace detail {

template <class S>
void check_finite_values(const Node<S>* n, const char* what) {
    for (const S& x : n->value)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError("tensor.nonfinite",
                               std::string(what) + " produced NaN/Inf output");
}

} // namespace detail

// Creates the result node of an op: requires_grad if any parent does,
// parents linked. The caller fills value and backward. Interior gradient
// buffers are allocated lazily by backward(), not here.
template <class S>
Tensor<S> op_result(Shape shape, std::initializer_list<Tensor<S>> parents) {
    bool rg = false;
    for (const Tensor<S>& p : parents) rg = rg || p.requires_grad();
    Tensor<S> out = Tensor<S>::zeros(std::move(shape), false);
    out.node()->requires_grad = rg;
    for (const Tensor<S>& p : parents) out.node()->parents.push_back(p.node());
    return out;
}

template <class S>
Tensor<S> op_result(Shape shape, const std::vector<Tensor<S>>& parents) {
    bool rg = false;
    for (const Tensor<S>& p : parents) rg = rg || p.requires_grad();
    Tensor<S> out = Tensor<S>::zeros(std::move(shape), false);
    out.node()->requires_grad = rg;
    for (const Tensor<S>& p : parents) out.node()->parents.push_back(p.node());
    return out;
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate into existing
// buffers; call zero_grad between steps to reset. Repeated backward calls
// therefore sum their contributions.
template <class S>
void backward(const Tensor<S>& loss) {
    require(loss.numel() == 1, "autograd.non_scalar_loss", "backward() needs a scalar loss");
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw NumericError("autograd.nonfinite_loss", "loss is NaN/Inf");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; recursion depth is unbounded on long chains.
    std::vector<Node<S>*> order;
    std::unordered_set<const Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.push_back({loss.raw(), 0});
    seen.insert(loss.raw());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<S>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior grads are per-sweep scratch; only leaves (no parents)
    // accumulate across repeated backward calls. Interior buffers are
    // allocated here on first use.
    for (Node<S>* n : order) {
        if (!n->parents.empty() || n->grad.empty())
            n->grad.assign(n->value.size(), S(0));
    }
    loss.raw()->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward();

    for (const Node<S>* n : order)
        for (const S& g : n->grad)
            if (!std::isfinite(static_cast<double>(g)))
                throw NumericError("autograd.nonfinite_grad", "NaN/Inf gradient encountered");
}

} // namespace amt::nn
