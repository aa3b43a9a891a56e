#include "diffuasr/adam.hpp"

#include <cmath>

namespace diffuasr::nn {

template <typename T>
void Adam<T>::step(ParameterSet<T>& params) {
    std::vector<Tensor<T>*> values;
    std::vector<const Tensor<T>*> grads;
    std::vector<Tensor<T>> zeros;
    zeros.reserve(params.entries().size());
    for (auto& [name, var] : params.entries()) {
        values.push_back(&var.mutable_value());
        if (var.has_grad()) {
            grads.push_back(&var.grad());
        } else {
            zeros.emplace_back(var.shape());
            grads.push_back(&zeros.back());
        }
    }
    step(values, grads);
}

template <typename T>
void Adam<T>::step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (params.size() != grads.size())
        throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    if (m_.empty()) {
        for (auto* p : params) {
            m_.emplace_back(p->shape());
            v_.emplace_back(p->shape());
        }
    }
    if (m_.size() != params.size()) throw ShapeError("adam: parameter count changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != m_[i].shape())
            throw ShapeError("adam: parameter " + shape_str(params[i]->shape()) + " vs gradient " +
                             shape_str(grads[i]->shape()));
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        T* p = params[i]->ptr();
        const T* g = grads[i]->ptr();
        T* m = m_[i].ptr();
        T* v = v_[i].ptr();
        const std::int64_t n = params[i]->numel();
        for (std::int64_t j = 0; j < n; ++j) {
            m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g[j]);
            v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g[j] * g[j]);
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] = static_cast<T>(p[j] - config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon));
        }
    }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace diffuasr::nn
