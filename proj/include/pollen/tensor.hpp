#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "pollen/errors.hpp"
#include "pollen/rng.hpp"

// Reverse-mode autograd over dense tensors. A tensor is a shared handle to a
// node holding the value buffer, an optional gradient buffer, and — while
// grad recording is enabled — the parent links and a backward closure that
// accumulates into the parents' grads. backward() walks the recorded graph
// once, in reverse topological order.
//
// Scalar type is a template parameter: float is the runtime path, double is
// the mode the finite-difference checks run in.

namespace pollen {

namespace autograd_detail {
inline thread_local bool grad_enabled = true;
inline thread_local bool finite_checks = false;
}  // namespace autograd_detail

inline bool grad_enabled() { return autograd_detail::grad_enabled; }
inline void set_finite_checks(bool on) { autograd_detail::finite_checks = on; }
inline bool finite_checks_enabled() { return autograd_detail::finite_checks; }

// RAII scope that disables graph recording (inference / data paths).
struct NoGradGuard {
    NoGradGuard() : prev_(autograd_detail::grad_enabled) { autograd_detail::grad_enabled = false; }
    ~NoGradGuard() { autograd_detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

template <class T>
struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first needed; value.size() afterwards
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class TensorT {
  public:
    using Node = TensorNode<T>;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static TensorT full(std::vector<int64_t> shape, T fill, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(static_cast<size_t>(numel_of(n->shape)), fill);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT from_data(std::vector<int64_t> shape, std::vector<T> data,
                             bool requires_grad = false) {
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static TensorT randn(std::vector<int64_t> shape, Rng& rng, T stddev = T(1),
                         bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node().value) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    Node& node() const { return *n_; }
    const std::shared_ptr<Node>& ptr() const { return n_; }

    const std::vector<int64_t>& shape() const { return n_->shape; }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
    int64_t extent(size_t dim) const { return n_->shape.at(dim); }

    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }
    T* raw() { return n_->value.data(); }
    const T* raw() const { return n_->value.data(); }

    bool requires_grad() const { return n_->requires_grad; }
    TensorT& set_requires_grad(bool rg = true) {
        n_->requires_grad = rg;
        return *this;
    }

    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<T>& grad_view() const { return n_->grad; }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1)
            throw ShapeError("item() on tensor with " + std::to_string(numel()) + " elements");
        return n_->value[0];
    }

    bool all_finite() const {
        for (const T v : n_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Populates grads of every reachable requires_grad node. The receiver must
    // be a scalar.
    void backward() const {
        if (numel() != 1) throw ValueError("backward() requires a scalar loss tensor");
        std::vector<Node*> order;
        topo_sort(order);
        n_->ensure_grad();
        n_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            if (node->backward_fn) node->backward_fn(*node);
        }
    }

    // Drops graph edges so the value can outlive training-step bookkeeping.
    TensorT detach() const {
        auto n = std::make_shared<Node>();
        n->shape = n_->shape;
        n->value = n_->value;
        return TensorT(std::move(n));
    }

    static std::string shape_str(const std::vector<int64_t>& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << "]";
        return os.str();
    }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t e : shape) {
            if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
            n *= e;
        }
        return n;
    }

  private:
    void topo_sort(std::vector<Node*>& order) const {
        std::unordered_set<Node*> seen;
        // Iterative post-order DFS; each node enters `order` after its parents.
        std::vector<std::pair<Node*, size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* p = node->parents[next++].get();
                if (seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> n_;
};

using Tensor = TensorT<float>;

// Throws if a freshly produced value buffer contains NaN/Inf. Called by the
// ops when finite checks are switched on (tests, grad-check).
template <class T>
inline void check_finite(const TensorT<T>& t, const char* op) {
    if (!finite_checks_enabled()) return;
    if (!t.all_finite()) throw ValueError(std::string("non-finite value produced by op '") + op + "'");
}

}  // namespace pollen
