#pragma once

#include "../error.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace fidlar::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Plain n-dimensional value: shape plus a flat row-major buffer.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(Shape s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}
    Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape))
            throw StructuralError("array data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }

    static Array scalar(double v) { return Array(Shape{1}, std::vector<double>{v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t last() const { return shape.empty() ? 1 : shape.back(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording on this thread for its lifetime (inference mode).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

struct Node {
    Array value;
    std::vector<double> grad; // lazily sized to value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    double* grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad.data();
    }
};

/**
 * Handle to a node in the dynamic computation graph.
 *
 * Copies share the node. Leaves created with requires_grad accumulate
 * gradients across backward() calls until zero_grad().
 */
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Array value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor constant(Array v) { return Tensor(std::move(v), false); }
    static Tensor leaf(Array v) { return Tensor(std::move(v), true); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->value.shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rank() const { return node_->value.rank(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    const Array& value() const { return node_->value; }
    Array& mutable_value() { return node_->value; }
    const double* data() const { return node_->value.data.data(); }
    double item() const {
        if (size() != 1) throw StructuralError("item() on tensor of shape " + shape_str(shape()));
        return node_->value.data[0];
    }
    bool requires_grad() const { return node_->requires_grad; }

    /// Gradient buffer as an Array (zeros when nothing has been accumulated).
    Array grad() const {
        if (node_->grad.empty()) return Array(shape(), 0.0);
        return Array(shape(), node_->grad);
    }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    /// Reverse sweep from this scalar; each reachable node is visited once.
    void backward() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<void(Node&)>;

/// Wraps an op result; the graph edge is recorded only when some parent needs a gradient.
inline Tensor make_result(Array value, std::initializer_list<const Tensor*> parents, BackwardFn fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_enabled()) {
        bool rg = false;
        for (const Tensor* p : parents) rg = rg || p->requires_grad();
        if (rg) {
            n->requires_grad = true;
            for (const Tensor* p : parents) n->parents.push_back(p->node_ptr());
            n->backward_fn = std::move(fn);
        }
    }
    return Tensor(std::move(n));
}

inline Tensor make_result(Array value, const std::vector<Tensor>& parents, BackwardFn fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_enabled()) {
        bool rg = false;
        for (const auto& p : parents) rg = rg || p.requires_grad();
        if (rg) {
            n->requires_grad = true;
            for (const auto& p : parents) n->parents.push_back(p.node_ptr());
            n->backward_fn = std::move(fn);
        }
    }
    return Tensor(std::move(n));
}

inline void Tensor::backward() const {
    if (size() != 1) throw StructuralError("backward() needs a scalar, got shape " + shape_str(shape()));
    if (!requires_grad()) return;
    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

} // namespace fidlar::ad
