#include "diffuasr/autograd.hpp"

#include <cassert>
#include <unordered_set>

namespace diffuasr::nn {

namespace {
thread_local bool g_grad_enabled = true;

template <typename T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // Iterative post-order DFS; (node, next parent index).
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, const char* op,
                   std::function<void(Node<T>&)> backward_fn) {
#ifdef DIFFUASR_CHECK_FINITE
    assert(value.all_finite() && "non-finite op output");
#endif
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (auto& p : parents) {
                // Undefined optional inputs become inert placeholders.
                node->parents.push_back(p.defined() ? p.shared() : std::make_shared<Node<T>>());
            }
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    Node<T>* root = loss.node();
    if (!root->requires_grad) return;
    auto order = topological_order(root);
    root->grad = Tensor<T>(root->value.shape(), T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad.numel() == n->value.numel()) n->backward_fn(*n);
    }
    for (Node<T>* n : order) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
            if (n != root) n->grad = Tensor<T>();
        }
    }
}

template <typename T>
std::vector<Tensor<T>> grad(const Var<T>& loss, const std::vector<Var<T>>& inputs) {
    if (loss.numel() != 1)
        throw ShapeError("grad needs a scalar loss, got shape " + shape_str(loss.shape()));
    std::vector<Tensor<T>> out;
    Node<T>* root = loss.node();
    if (!root->requires_grad) {
        for (const auto& in : inputs) out.emplace_back(in.shape());
        return out;
    }
    auto order = topological_order(root);
    // Parents come before children in `order`, so one forward sweep finds
    // every node that depends on an input.
    std::unordered_set<Node<T>*> wanted;
    for (const auto& in : inputs) wanted.insert(in.node());
    std::vector<Node<T>*> muted;
    for (Node<T>* n : order) {
        bool needed = wanted.count(n) > 0;
        for (const auto& p : n->parents) needed = needed || wanted.count(p.get()) > 0;
        if (needed) {
            wanted.insert(n);
        } else if (n->requires_grad) {
            n->requires_grad = false;
            muted.push_back(n);
        }
    }
    std::vector<Tensor<T>> saved;
    for (const auto& in : inputs) saved.push_back(std::move(in.node()->grad));
    for (const auto& in : inputs) in.node()->grad = Tensor<T>();
    if (root->requires_grad) backward(loss);
    for (Node<T>* n : muted) n->requires_grad = true;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Node<T>* n = inputs[i].node();
        out.push_back(n->grad.numel() == n->value.numel() ? std::move(n->grad) : Tensor<T>(n->value.shape()));
        n->grad = std::move(saved[i]);
    }
    return out;
}

template <typename T>
std::size_t graph_size(const Var<T>& root) {
    if (!root.requires_grad()) return 0;
    return topological_order(root.node()).size();
}

template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, const char*,
                                std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, const char*,
                                 std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);
template std::vector<Tensor<float>> grad(const Var<float>&, const std::vector<Var<float>>&);
template std::vector<Tensor<double>> grad(const Var<double>&, const std::vector<Var<double>>&);
template std::size_t graph_size(const Var<float>&);
template std::size_t graph_size(const Var<double>&);

}  // namespace diffuasr::nn
