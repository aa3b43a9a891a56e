#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffuasr/tensor.hpp"

namespace diffuasr::nn {

/// One recorded operation: its cached forward value, the parents it read, and
/// a closure that pushes this node's gradient into the parents' gradients.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    /// Gradient buffer of parent `i`, allocated on first use; null when that
    /// parent does not take part in differentiation.
    Tensor<T>* parent_grad(std::size_t i) {
        Node& p = *parents[i];
        if (!p.requires_grad) return nullptr;
        if (p.grad.numel() != p.value.numel()) p.grad = Tensor<T>(p.value.shape());
        return &p.grad;
    }
};

template <typename T>
class Var {
   public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    /// Direct access for optimizers and checkpoint loading; bypasses the graph.
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.numel() == node_->value.numel(); }
    void zero_grad() { node_->grad = Tensor<T>(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(int axis) const { return node_->value.dim(axis); }
    std::int64_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }

    /// Scalar value of a one-element variable.
    T item() const { return node_->value[0]; }

   private:
    std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Sets grad mode on the current thread for its lifetime.
class GradModeGuard {
   public:
    explicit GradModeGuard(bool enabled);
    ~GradModeGuard();
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

   private:
    bool previous_;
};

/// Wraps a forward result. The node is recorded only when grad mode is on and
/// at least one parent requires a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, const char* op,
                   std::function<void(Node<T>&)> backward_fn);

/// Reverse pass from a scalar `loss`. Gradients accumulate into every leaf
/// with requires_grad set; intermediate nodes are released afterwards.
template <typename T>
void backward(const Var<T>& loss);

/// Gradients of a scalar `loss` with respect to `inputs` only. Other leaves
/// (model parameters included) are left untouched. Not safe to run while
/// another thread differentiates through the same parameters.
template <typename T>
std::vector<Tensor<T>> grad(const Var<T>& loss, const std::vector<Var<T>>& inputs);

/// Number of nodes reachable from `root` that take part in differentiation.
template <typename T>
std::size_t graph_size(const Var<T>& root);

}  // namespace diffuasr::nn
